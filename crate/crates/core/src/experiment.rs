//! Drives a workload through an engine and records metric snapshots.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::config::Config;
use crate::engine::Engine;
use crate::entry::EntryKind;
use crate::error::{Error, Result};
use crate::fade::is_expired;
use crate::fences::FenceMemory;
use crate::metrics::{compute_space_amp, compute_write_amp, PageReadSummary, RangeRecord, VersionRecord};
use crate::par;
use crate::store::Store;
use crate::workload::{value_for, Workload, WorkloadOp, WorkloadSpec};

/// Bumped whenever the CSV columns change.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Point-in-time view of an engine. Counters are cumulative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsSnapshot {
    pub time_s: f64,
    pub files: u64,
    pub levels: u64,
    pub flushes: u64,
    pub compactions: u64,
    pub ttl_compactions: u64,
    pub moves: u64,
    pub bytes_flushed: u64,
    pub bytes_compacted: u64,
    /// Flushed plus compaction-written bytes.
    pub bytes_written: u64,
    pub space_amp: f64,
    pub write_amp: f64,
    pub live_tombstones: u64,
    pub tombstones_inserted: u64,
    pub tombstones_dropped: u64,
    pub max_tombstone_age_s: f64,
    pub full_drops: u64,
    pub partial_edits: u64,
    pub point_lookups: u64,
    pub lookup_pages_read: u64,
    pub hash_computations: u64,
    pub filter_probes: u64,
    pub pages_read: u64,
    pub pages_written: u64,
    pub fence_bytes: u64,
    pub filter_bytes: u64,
}

impl MetricsSnapshot {
    pub const COLUMNS: [&'static str; 27] = [
        "schema",
        "time_s",
        "files",
        "levels",
        "flushes",
        "compactions",
        "ttl_compactions",
        "moves",
        "bytes_flushed",
        "bytes_compacted",
        "bytes_written",
        "space_amp",
        "write_amp",
        "live_tombstones",
        "tombstones_inserted",
        "tombstones_dropped",
        "max_tombstone_age_s",
        "full_drops",
        "partial_edits",
        "point_lookups",
        "lookup_pages_read",
        "hash_computations",
        "filter_probes",
        "pages_read",
        "pages_written",
        "fence_bytes",
        "filter_bytes",
    ];

    fn row(&self) -> String {
        let s = self;
        format!(
            "{CSV_SCHEMA_VERSION},{:.3},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{},{},{},{:.3},{},{},{},{},{},{},{},{},{},{}",
            s.time_s,
            s.files,
            s.levels,
            s.flushes,
            s.compactions,
            s.ttl_compactions,
            s.moves,
            s.bytes_flushed,
            s.bytes_compacted,
            s.bytes_written,
            s.space_amp,
            s.write_amp,
            s.live_tombstones,
            s.tombstones_inserted,
            s.tombstones_dropped,
            s.max_tombstone_age_s,
            s.full_drops,
            s.partial_edits,
            s.point_lookups,
            s.lookup_pages_read,
            s.hash_computations,
            s.filter_probes,
            s.pages_read,
            s.pages_written,
            s.fence_bytes,
            s.filter_bytes,
        )
    }

    /// Counters that must never decrease between snapshots.
    pub fn counters(&self) -> [u64; 15] {
        let s = self;
        [
            s.flushes,
            s.compactions,
            s.ttl_compactions,
            s.moves,
            s.bytes_flushed,
            s.bytes_compacted,
            s.bytes_written,
            s.tombstones_inserted,
            s.tombstones_dropped,
            s.full_drops,
            s.partial_edits,
            s.point_lookups,
            s.hash_computations,
            s.pages_read,
            s.pages_written,
        ]
    }
}

pub fn to_csv(rows: &[MetricsSnapshot]) -> String {
    let mut out = MetricsSnapshot::COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.row());
        out.push('\n');
    }
    out
}

/// Ages, in logical seconds, of every stored tombstone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TombstoneCensus {
    pub ages_s: Vec<f64>,
    /// `(a_f, tombstones)` per file holding tombstones; buffered tombstones
    /// count as files of their own age.
    pub file_ages_s: Vec<(f64, u64)>,
}

impl TombstoneCensus {
    pub fn older_than(&self, seconds: f64) -> usize {
        self.ages_s.iter().filter(|a| **a > seconds).count()
    }

    /// Tombstones held in files whose oldest tombstone is older than `seconds`.
    pub fn in_files_older_than(&self, seconds: f64) -> u64 {
        self.file_ages_s.iter().filter(|(a, _)| *a > seconds).map(|(_, n)| n).sum()
    }

    pub fn max_age(&self) -> f64 {
        self.ages_s.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-file delete metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FileReport {
    pub file_id: u64,
    pub level: u32,
    pub entries: u64,
    pub tombstones: u64,
    /// Age of the oldest tombstone, seconds.
    pub a_f: f64,
    pub p_f: u64,
    pub b_f: f64,
    pub ttl: f64,
    /// Seconds since the file entered its level.
    pub age_s: f64,
    pub expired: bool,
}

pub fn file_report(engine: &Engine) -> Vec<FileReport> {
    let v = engine.version();
    let now = engine.now();
    let rate = engine.config().ingest_rate;
    v.files()
        .map(|f| {
            let m = &f.meta;
            FileReport {
                file_id: m.file_id,
                level: m.level,
                entries: m.num_entries,
                tombstones: m.tombstone_count(),
                a_f: m.age_anchor_seqnum.map_or(0.0, |s| engine.age_of(s)),
                p_f: m.tombstone_count(),
                b_f: m.b_f,
                ttl: m.ttl,
                age_s: now.saturating_sub(m.level_arrival_time) as f64 / rate as f64,
                expired: engine
                    .ttls()
                    .is_some_and(|t| is_expired(f, m.level as usize, t, engine.time_ring(), now, rate)),
            }
        })
        .collect()
}

pub fn file_report_csv(rows: &[FileReport]) -> String {
    let mut out = String::from("schema,file_id,level,entries,tombstones,a_f,p_f,b_f,ttl,age_s,expired\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{CSV_SCHEMA_VERSION},{},{},{},{},{:.3},{},{:.3},{:.3},{:.3},{}",
            r.file_id, r.level, r.entries, r.tombstones, r.a_f, r.p_f, r.b_f, r.ttl, r.age_s, r.expired
        );
    }
    out
}

/// Scans every stored version and tombstone. An empty engine yields an
/// all-zero snapshot.
pub fn snapshot(engine: &Engine) -> Result<(MetricsSnapshot, TombstoneCensus)> {
    let v = engine.version();
    let files: Vec<_> = v.files().cloned().collect();
    let store = engine.store().clone();
    let runs = par::map_with(engine.config().exec, &files, |f| f.read_live_entries(store.as_ref()));

    let mut versions = Vec::new();
    let mut ranges = Vec::new();
    let mut census = TombstoneCensus::default();
    for (f, run) in files.iter().zip(runs) {
        for e in run? {
            let is_put = e.kind == EntryKind::Put;
            if !is_put {
                census.ages_s.push(engine.age_of(e.seqnum));
            }
            versions.push(VersionRecord {
                sort_key: e.sort_key,
                seqnum: e.seqnum,
                bytes: e.encoded_len() as u64,
                is_put,
            });
        }
        if let Some(anchor) = f.meta.age_anchor_seqnum {
            census.file_ages_s.push((engine.age_of(anchor), f.meta.tombstone_count()));
        }
        for rt in &f.range_tombstones {
            census.ages_s.push(engine.age_of(rt.seqnum));
            ranges.push(RangeRecord { lo: rt.lo, hi: rt.hi, seqnum: rt.seqnum, bytes: rt.encoded_len() as u64 });
        }
    }
    let buffered = engine.buffer().entries().filter(|e| e.kind != EntryKind::Put).map(|e| e.seqnum);
    for seq in buffered.chain(engine.buffer().range_tombstones().iter().map(|r| r.seqnum)) {
        census.ages_s.push(engine.age_of(seq));
        census.file_ages_s.push((engine.age_of(seq), 1));
    }
    let space_amp = match compute_space_amp(versions, &ranges) {
        Ok(a) => a,
        Err(Error::EmptyTree) => 0.0,
        Err(e) => return Err(e),
    };

    let mut fences = FenceMemory::default();
    for f in &files {
        fences.add_tiles(&f.tiles);
    }
    let io = engine.stats().snapshot();
    let snap = MetricsSnapshot {
        time_s: engine.now() as f64 / engine.config().ingest_rate as f64,
        files: files.len() as u64,
        levels: v.deepest_level() as u64,
        flushes: io.flushes,
        compactions: io.compactions,
        ttl_compactions: io.ttl_compactions,
        moves: io.moves,
        bytes_flushed: io.bytes_flushed,
        bytes_compacted: io.bytes_compacted,
        bytes_written: io.bytes_flushed + io.bytes_compaction_written,
        space_amp,
        write_amp: compute_write_amp(&io),
        live_tombstones: census.ages_s.len() as u64,
        tombstones_inserted: io.tombstones_inserted + io.range_tombstones_inserted,
        tombstones_dropped: io.tombstones_dropped,
        max_tombstone_age_s: census.max_age(),
        full_drops: io.full_drops,
        partial_edits: io.partial_edits,
        point_lookups: io.point_lookups,
        lookup_pages_read: io.lookup_pages_read,
        hash_computations: io.hash_computations,
        filter_probes: io.filter_probes,
        pages_read: io.pages_read,
        pages_written: io.pages_written,
        fence_bytes: fences.total(),
        filter_bytes: files.iter().map(|f| f.filter_bytes()).sum(),
    };
    Ok((snap, census))
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Evenly spaced over ingestion, then one after the lookup phase.
    pub snapshots: Vec<MetricsSnapshot>,
    pub census: TombstoneCensus,
    /// Page reads per lookup on inserted keys.
    pub lookups: PageReadSummary,
    /// Page reads per lookup on never-inserted keys.
    pub absent_lookups: PageReadSummary,
    /// Lookups whose answer differed from the reference map.
    pub mismatches: u64,
    pub threshold_s: f64,
    pub elapsed: Duration,
}

impl ExperimentResult {
    pub fn last(&self) -> &MetricsSnapshot {
        self.snapshots.last().expect("at least one snapshot")
    }
}

/// Options for [`run_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub snapshots: usize,
    /// Check every lookup against an in-memory reference map.
    pub verify: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { snapshots: 4, verify: true }
    }
}

/// Sets the delete-persistence threshold from the workload when delete-aware
/// compaction is on.
pub fn configure(spec: &WorkloadSpec, mut cfg: Config) -> Config {
    cfg.layout.entry_size = spec.entry_size;
    if cfg.fade.enabled {
        cfg.fade.d_th_s = spec.threshold_seconds(cfg.ingest_rate);
    }
    cfg
}

pub fn run_experiment(
    spec: &WorkloadSpec,
    cfg: Config,
    store: Arc<dyn Store>,
    opts: RunOptions,
) -> Result<ExperimentResult> {
    let started = Instant::now();
    let workload = Workload::new(spec.clone())?;
    let cfg = configure(spec, cfg);
    let threshold_s = spec.threshold_seconds(cfg.ingest_rate);
    let mut engine = Engine::open(store, cfg)?;
    let value_len = spec.value_len();
    let ingest = spec.ingest_ops();
    let every = (ingest / opts.snapshots.max(1) as u64).max(1);

    let mut model: HashMap<u64, (u64, u64)> = HashMap::new();
    let mut snapshots = Vec::new();
    let mut lookup_pages = Vec::new();
    let mut absent_pages = Vec::new();
    let mut mismatches = 0u64;
    let mut ingested = 0u64;

    for op in workload {
        if op.is_ingest() {
            ingested += 1;
        }
        match op {
            WorkloadOp::Put { key, delete_key, tag } => {
                engine.put(key, delete_key, value_for(tag, value_len))?;
                if opts.verify {
                    model.insert(key, (tag, delete_key));
                }
            }
            WorkloadOp::Delete { key, delete_key } => {
                engine.delete_with_key(key, delete_key)?;
                model.remove(&key);
            }
            WorkloadOp::RangeDelete { lo, hi } => {
                engine.range_delete(lo, hi)?;
                model.retain(|k, _| !(lo..hi).contains(k));
            }
            WorkloadOp::SecondaryRangeDelete { lo, hi } => {
                engine.secondary_range_delete(lo, hi)?;
                model.retain(|_, (_, dk)| !(lo..hi).contains(dk));
            }
            WorkloadOp::Get { key } | WorkloadOp::GetAbsent { key } => {
                let got = engine.lookup(key)?;
                if matches!(op, WorkloadOp::Get { .. }) {
                    lookup_pages.push(got.stats.pages_read);
                } else {
                    absent_pages.push(got.stats.pages_read);
                }
                if opts.verify {
                    let tag = got.value.as_ref().map(|v| u64::from_le_bytes(v[..8].try_into().unwrap()));
                    if tag != model.get(&key).map(|(t, _)| *t) {
                        mismatches += 1;
                    }
                }
            }
            WorkloadOp::Scan { lo, hi } => {
                let rows = engine.range_scan(lo, hi)?;
                if opts.verify {
                    let want = model.keys().filter(|k| (lo..hi).contains(*k)).count();
                    if rows.len() != want {
                        mismatches += 1;
                    }
                }
            }
        }
        if op.is_ingest() && ingested.is_multiple_of(every) && snapshots.len() < opts.snapshots {
            snapshots.push(snapshot(&engine)?.0);
        }
    }
    let (last, census) = snapshot(&engine)?;
    snapshots.push(last);
    Ok(ExperimentResult {
        snapshots,
        census,
        lookups: PageReadSummary::from_samples(&lookup_pages),
        absent_lookups: PageReadSummary::from_samples(&absent_pages),
        mismatches,
        threshold_s,
        elapsed: started.elapsed(),
    })
}
