use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lethekv::entry::{Entry, EntryKind};
use lethekv::layout::{build_file, LayoutConfig};
use lethekv::par::{self, Exec};
use lethekv::store::MemStore;
use lethekv::tuner::{cost_grid, CostModelParams, Fractions};
use lethekv::{Config, Engine};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn chunks(files: u64, per_file: u64) -> Vec<Vec<Entry>> {
    (0..files)
        .map(|f| {
            (0..per_file)
                .map(|i| {
                    let k = f * per_file + i;
                    Entry {
                        sort_key: k,
                        delete_key: k.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 20,
                        seqnum: k + 1,
                        kind: EntryKind::Put,
                        value: vec![7; 32],
                    }
                })
                .collect()
        })
        .collect()
}

fn engine(exec: Exec, h: usize) -> Engine {
    let mut c = Config::classic();
    c.layout.h = h;
    c.layout.entry_size = 64;
    c.layout.pages_per_file = 16;
    c.buffer_bytes = 256 << 10;
    c.size_ratio = 4;
    c.key_space = 1 << 20;
    c.exec = exec;
    let mut e = Engine::open(Arc::new(MemStore::new()), c).unwrap();
    for k in 0..60_000u64 {
        let key = k.wrapping_mul(2_654_435_761) % (1 << 20);
        e.put(key, k, vec![1; 16]).unwrap();
    }
    e.flush().unwrap();
    e
}

fn file_builds(c: &mut Criterion) {
    let cfg = LayoutConfig { h: 16, pages_per_file: 64, entry_size: 64, ..Default::default() };
    let input = chunks(32, cfg.file_capacity() as u64);
    let mut g = c.benchmark_group("file_build");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::map_with(exec.available(), &input, |es| build_file(black_box(es.clone()), &cfg).unwrap()))
        });
    }
    g.finish();
}

fn compaction_merges(c: &mut Criterion) {
    let mut g = c.benchmark_group("compaction_merge");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || engine(exec.available(), 4),
                |mut e| {
                    // enough writes to cascade through every level
                    for k in 0..20_000u64 {
                        e.put(k * 31 % (1 << 20), k, vec![2; 16]).unwrap();
                    }
                    e.flush().unwrap()
                },
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

fn secondary_deletes(c: &mut Criterion) {
    let mut g = c.benchmark_group("secondary_range_delete");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || engine(exec.available(), 8),
                |mut e| e.secondary_range_delete(10_000, 20_000).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

fn tuner_grid(c: &mut Criterion) {
    let params: Vec<CostModelParams> = (0..256)
        .map(|i| CostModelParams {
            entries: 1e6 * (1 + i) as f64,
            pages_per_file: 1024,
            fractions: Fractions {
                point: 0.5,
                short_range: 0.01,
                secondary_delete: 1e-4,
                insert: 0.4,
                ..Default::default()
            },
            ..Default::default()
        })
        .collect();
    let mut g = c.benchmark_group("tuner_grid");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::map_with(exec.available(), &params, |p| cost_grid(black_box(p)).unwrap().len()))
        });
    }
    g.finish();
}

criterion_group!(benches, file_builds, compaction_merges, secondary_deletes, tuner_grid);
criterion_main!(benches);
