use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use lethekv::config::{parse_pairs, read_pairs};
use lethekv::experiment::{file_report, file_report_csv, run_experiment, snapshot, to_csv, RunOptions};
use lethekv::store::FsStore;
use lethekv::tuner::{cost_breakdown, cost_grid, expected_metrics, h_bound, optimal_h, CostModelParams, Rounding};
use lethekv::workload::{value_for, Correlation, Threshold, Workload, WorkloadOp, WorkloadSpec};
use lethekv::{Config, Engine, Error, Result};

/// Settings saved next to the data so later commands reopen with them.
const OPTIONS_FILE: &str = "OPTIONS";

#[derive(Parser)]
#[command(name = "lethekv", version, about = "LSM key-value engine with delete-aware compaction")]
struct Cli {
    /// Database directory.
    #[arg(long, env = "LETHEKV_DIR", global = true, default_value = "lethekv-db")]
    dir: PathBuf,
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra key=value settings, applied after the file.
    #[arg(long = "set", global = true)]
    set: Vec<String>,
    /// Write CSV output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Classic,
    Lethe,
}

#[derive(clap::Args)]
struct WorkloadArgs {
    #[arg(long, value_enum, default_value = "lethe")]
    mode: Mode,
    /// Pages per delete tile in lethe mode.
    #[arg(long, default_value_t = 1)]
    h: usize,
    /// Bytes ingested.
    #[arg(long, default_value_t = 64 << 20)]
    dataset_bytes: u64,
    /// Fraction of ingestion that is point deletes.
    #[arg(long, default_value_t = 0.1)]
    deletes: f64,
    /// Delete persistence threshold as a fraction of the run.
    #[arg(long, default_value_t = 0.25)]
    threshold: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_parser = ["independent", "equal"], default_value = "independent")]
    correlation: String,
    #[arg(long, default_value_t = 5)]
    snapshots: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ingest a workload's writes into the database.
    Load(WorkloadArgs),
    /// Run a full workload on a fresh database and emit snapshot CSV.
    Run(WorkloadArgs),
    /// Per-file delete metadata as CSV.
    Snapshot,
    /// One metrics row for the database as CSV.
    Report,
    /// Recommend a delete tile size for a workload description.
    Tune {
        #[arg(long)]
        workload: Option<PathBuf>,
        #[arg(long)]
        exact: bool,
    },
    /// Delete every entry whose delete key lies in [dlo, dhi).
    Srd {
        #[arg(long)]
        dlo: u64,
        #[arg(long)]
        dhi: u64,
    },
    Get {
        key: u64,
    },
    Scan {
        lo: u64,
        hi: u64,
    },
}

fn settings(cli: &Cli) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    let saved = cli.dir.join(OPTIONS_FILE);
    if saved.exists() {
        pairs.extend(read_pairs(&saved)?);
    }
    if let Some(path) = &cli.config {
        pairs.extend(read_pairs(path)?);
    }
    for s in &cli.set {
        pairs.extend(parse_pairs(s)?);
    }
    Ok(pairs)
}

fn base_config(pairs: &BTreeMap<String, String>) -> Result<Config> {
    let mut cfg = match pairs.get("mode").map(String::as_str) {
        Some("lethe") => Config::lethe(3600.0, 1),
        Some("classic") | None => Config::classic(),
        Some(m) => return Err(Error::InvalidParams(format!("unknown mode {m}"))),
    }
    .desk();
    cfg.apply(pairs)?;
    Ok(cfg)
}

fn save_settings(dir: &Path, pairs: &BTreeMap<String, String>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = String::new();
    for (k, v) in pairs {
        let _ = writeln!(text, "{k} = {v}");
    }
    std::fs::write(dir.join(OPTIONS_FILE), text)?;
    Ok(())
}

fn workload_spec(a: &WorkloadArgs, pairs: &BTreeMap<String, String>, cfg: &Config) -> Result<WorkloadSpec> {
    let mut spec = WorkloadSpec::ycsb_a(
        a.dataset_bytes,
        cfg.layout.entry_size,
        a.deletes,
        Threshold::FractionOfRun(a.threshold),
        a.seed,
    );
    spec.correlation = a.correlation.parse::<Correlation>()?;
    spec.apply(pairs)?;
    spec.validate()?;
    Ok(spec)
}

fn prepare(cli: &Cli, a: &WorkloadArgs) -> Result<(Config, WorkloadSpec)> {
    let mut pairs = settings(cli)?;
    let mode = match a.mode {
        Mode::Classic => "classic",
        Mode::Lethe => "lethe",
    };
    pairs.entry("mode".into()).or_insert_with(|| mode.into());
    if matches!(a.mode, Mode::Lethe) {
        pairs.entry("layout.h".into()).or_insert_with(|| a.h.to_string());
    }
    let cfg = base_config(&pairs)?;
    let spec = workload_spec(a, &pairs, &cfg)?;
    pairs.insert("fade.d_th_s".into(), spec.threshold_seconds(cfg.ingest_rate).to_string());
    pairs.insert("layout.entry_size".into(), spec.entry_size.to_string());
    save_settings(&cli.dir, &pairs)?;
    Ok((lethekv::experiment::configure(&spec, cfg), spec))
}

fn open(cli: &Cli) -> Result<Engine> {
    let cfg = base_config(&settings(cli)?)?;
    Engine::open(Arc::new(FsStore::open(&cli.dir)?), cfg)
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn tune(cli: &Cli, workload: Option<&Path>, exact: bool) -> Result<String> {
    let mut params = CostModelParams::default();
    let mut pairs = settings(cli)?;
    if let Some(p) = workload {
        pairs.extend(read_pairs(p)?);
    }
    pairs.retain(|k, _| k.starts_with("tune.") || !k.contains('.') && k != "mode");
    params.apply(&pairs)?;
    let rounding = if exact { Rounding::Exact } else { Rounding::PowerOfTwo };
    let h = optimal_h(&params, rounding)?;
    let b = cost_breakdown(&params, h as f64)?;
    let mut out = String::new();
    let _ = writeln!(out, "# h* = {h} (bound {:.3})", h_bound(&params)?);
    let _ = writeln!(
        out,
        "# cost at h*: empty_point={:.6} point={:.6} short_range={:.6} long_range={:.6} secondary_delete={:.6} insert={:.6} total={:.6}",
        b.empty_point, b.point, b.short_range, b.long_range, b.secondary_delete, b.insert, b.total()
    );
    for r in expected_metrics(&params, h as f64)? {
        let _ = writeln!(
            out,
            "# {}: classic leveling {:.4e} tiering {:.4e}, lethe leveling {:.4e} tiering {:.4e}",
            r.metric, r.classic_leveling, r.classic_tiering, r.lethe_leveling, r.lethe_tiering
        );
    }
    out.push_str("h,cost\n");
    for (h, c) in cost_grid(&params)? {
        let _ = writeln!(out, "{h},{c:.9}");
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Load(a) => {
            let (cfg, spec) = prepare(cli, a)?;
            let mut engine = Engine::open(Arc::new(FsStore::open(&cli.dir)?), cfg)?;
            let len = spec.value_len();
            for op in Workload::new(spec)?.filter(WorkloadOp::is_ingest) {
                match op {
                    WorkloadOp::Put { key, delete_key, tag } => engine.put(key, delete_key, value_for(tag, len))?,
                    WorkloadOp::Delete { key, delete_key } => {
                        engine.delete_with_key(key, delete_key)?;
                    }
                    WorkloadOp::RangeDelete { lo, hi } => engine.range_delete(lo, hi)?,
                    WorkloadOp::SecondaryRangeDelete { lo, hi } => {
                        engine.secondary_range_delete(lo, hi)?;
                    }
                    _ => {}
                }
            }
            engine.close()?;
            emit(cli, &to_csv(&[snapshot(&engine)?.0]))
        }
        Cmd::Run(a) => {
            if cli.dir.join("MANIFEST").exists() {
                return Err(Error::InvalidParams(format!("{} already holds a database", cli.dir.display())));
            }
            let (cfg, spec) = prepare(cli, a)?;
            let opts = RunOptions { snapshots: a.snapshots, verify: false };
            let r = run_experiment(&spec, cfg, Arc::new(FsStore::open(&cli.dir)?), opts)?;
            eprintln!(
                "done in {:.1?}: {} tombstones older than {:.1}s",
                r.elapsed,
                r.census.older_than(r.threshold_s),
                r.threshold_s
            );
            emit(cli, &to_csv(&r.snapshots))
        }
        Cmd::Snapshot => emit(cli, &file_report_csv(&file_report(&open(cli)?))),
        Cmd::Report => emit(cli, &to_csv(&[snapshot(&open(cli)?)?.0])),
        Cmd::Tune { workload, exact } => emit(cli, &tune(cli, workload.as_deref(), *exact)?),
        Cmd::Srd { dlo, dhi } => {
            let mut e = open(cli)?;
            let s = e.secondary_range_delete(*dlo, *dhi)?;
            e.close()?;
            emit(
                cli,
                &format!(
                    "full_drops,partial_edits,emptied,pages_read,entries_removed\n{},{},{},{},{}\n",
                    s.full_drops, s.partial_edits, s.emptied, s.pages_read, s.entries_removed
                ),
            )
        }
        Cmd::Get { key } => {
            let l = open(cli)?.lookup(*key)?;
            let shown = match &l.value {
                Some(v) => format!("found {} bytes, {} pages read", v.len(), l.stats.pages_read),
                None => format!("not found, {} pages read", l.stats.pages_read),
            };
            emit(cli, &format!("{shown}\n"))
        }
        Cmd::Scan { lo, hi } => {
            let rows = open(cli)?.range_scan(*lo, *hi)?;
            let mut out = String::from("key,value_bytes\n");
            for (k, v) in rows {
                let _ = writeln!(out, "{k},{}", v.len());
            }
            emit(cli, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lethekv: {e}");
            ExitCode::FAILURE
        }
    }
}
