//! Delete-aware compaction planning: per-level TTLs that sum to the delete
//! persistence threshold, per-file tombstone age and invalidation estimates,
//! and the trigger / file-selection policy.

use crate::clock::TimeRing;
use crate::error::{Error, Result};
use crate::histogram::Histogram;
use crate::manifest::Version;
use crate::sstable::{FileRef, SstFile};

#[derive(Debug, Clone, PartialEq)]
pub struct TtlSchedule {
    /// TTL in logical seconds of each TTL-bearing level, Level 1 first.
    pub d: Vec<f64>,
    pub d_th: f64,
    pub size_ratio: f64,
}

/// `d[0] = D_th (T - 1) / (T^K - 1)`, `d[i] = T^i d[0]`, so `sum(d) = D_th`.
pub fn compute_ttls(d_th: f64, size_ratio: f64, levels: usize) -> Result<TtlSchedule> {
    if levels == 0 || size_ratio < 2.0 || d_th.is_nan() || d_th <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "need K >= 1, T >= 2, D_th > 0 (got K = {levels}, T = {size_ratio}, D_th = {d_th})"
        )));
    }
    let d0 = d_th * (size_ratio - 1.0) / (size_ratio.powi(levels as i32) - 1.0);
    let d = (0..levels).map(|i| d0 * size_ratio.powi(i as i32)).collect();
    Ok(TtlSchedule { d, d_th, size_ratio })
}

impl TtlSchedule {
    pub fn levels(&self) -> usize {
        self.d.len()
    }

    /// TTL of disk level `level` (1-based); 0 for the last level.
    pub fn ttl(&self, level: usize) -> f64 {
        level.checked_sub(1).and_then(|i| self.d.get(i)).copied().unwrap_or(0.0)
    }

    /// Budget consumed by the time a tombstone leaves `level`.
    pub fn cumulative(&self, level: usize) -> f64 {
        self.d.iter().take(level).sum()
    }

    pub fn sum(&self) -> f64 {
        self.d.iter().sum()
    }
}

/// TTL-bearing levels for a tree whose deepest non-empty level is `deepest`.
pub fn ttl_levels(deepest: usize) -> usize {
    deepest.saturating_sub(1).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeleteMeta {
    /// Age of the oldest tombstone, logical seconds; 0 without tombstones.
    pub a_f: f64,
    pub p_f: u64,
    pub b_f: f64,
}

/// Range-tombstone invalidation estimate from the system-wide histogram.
pub fn estimate_range_invalidations(file: &SstFile, histogram: &Histogram) -> f64 {
    file.range_tombstones.iter().map(|r| histogram.estimate_range(r.lo, r.hi)).sum()
}

/// `a_f`, `p_f` and `b_f = p_f + rd_f` for one file. `histogram` should
/// describe the rest of the tree.
pub fn update_file_meta(
    file: &SstFile,
    histogram: &Histogram,
    ring: &TimeRing,
    now: u64,
    ingest_rate: u64,
) -> DeleteMeta {
    let p_f = file.meta.num_point_tombstones;
    let a_f =
        file.meta.age_anchor_seqnum.map_or(0.0, |s| now.saturating_sub(ring.time_of(s)) as f64 / ingest_rate as f64);
    let rd_f = estimate_range_invalidations(file, histogram);
    DeleteMeta { a_f, p_f, b_f: p_f as f64 + rd_f }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    Saturation,
    TtlExpiry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMode {
    /// Saturation trigger, minimal overlap with the next level.
    #[default]
    So,
    /// Saturation trigger, highest invalidation estimate.
    Sd,
    /// TTL trigger, file holding an expired tombstone.
    Dd,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "so" => Ok(SelectionMode::So),
            "sd" => Ok(SelectionMode::Sd),
            "dd" => Ok(SelectionMode::Dd),
            other => Err(Error::InvalidParams(format!("unknown selection mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactionPlan {
    pub trigger: Trigger,
    pub mode: SelectionMode,
    pub source_level: usize,
    /// The selected file.
    pub chosen: u64,
    /// Every source-level file taking part (all of Level 1, or just `chosen`).
    pub sources: Vec<u64>,
    /// Overlapping files in `source_level + 1`.
    pub targets: Vec<u64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PlannerConfig {
    pub buffer_bytes: u64,
    pub size_ratio: u64,
    pub fade_enabled: bool,
    pub saturation_mode: SelectionMode,
    pub ingest_rate: u64,
}

impl PlannerConfig {
    pub fn capacity(&self, level: usize) -> u64 {
        self.buffer_bytes.saturating_mul(self.size_ratio.saturating_pow(level as u32))
    }
}

/// Logical tick after which `file` (at `level`) counts as expired. Levels
/// past the TTL-bearing ones get the whole threshold: tombstones there only
/// remain when the level below them emptied out.
pub fn expiry_tick(file: &SstFile, level: usize, ttls: &TtlSchedule, ring: &TimeRing, ingest_rate: u64) -> Option<u64> {
    let anchor = file.meta.age_anchor_seqnum?;
    let budget = ttls.cumulative(level.min(ttls.levels())) * ingest_rate as f64;
    Some(ring.time_of(anchor).saturating_add(budget.floor() as u64))
}

/// A file is expired once its oldest tombstone has outlived the budgets of
/// every level down to and including its own.
pub fn is_expired(
    file: &SstFile,
    level: usize,
    ttls: &TtlSchedule,
    ring: &TimeRing,
    now: u64,
    ingest_rate: u64,
) -> bool {
    expiry_tick(file, level, ttls, ring, ingest_rate).is_some_and(|t| now > t)
}

fn overlapping(version: &Version, level: usize, lo: u64, hi: u64) -> Vec<FileRef> {
    version.level(level).iter().filter(|f| f.meta.overlaps(lo, hi)).cloned().collect()
}

fn key_span(files: &[FileRef]) -> (u64, u64) {
    let lo = files.iter().map(|f| f.meta.min_sort_key).min().unwrap_or(0);
    let hi = files.iter().map(|f| f.meta.max_sort_key).max().unwrap_or(0);
    (lo, hi)
}

fn plan_for(
    version: &Version,
    trigger: Trigger,
    mode: SelectionMode,
    level: usize,
    chosen: &FileRef,
) -> CompactionPlan {
    let sources: Vec<FileRef> = if level == 1 { version.level(1).to_vec() } else { vec![chosen.clone()] };
    let (lo, hi) = key_span(&sources);
    let targets = overlapping(version, level + 1, lo, hi);
    CompactionPlan {
        trigger,
        mode,
        source_level: level,
        chosen: chosen.meta.file_id,
        sources: sources.iter().map(|f| f.meta.file_id).collect(),
        targets: targets.iter().map(|f| f.meta.file_id).collect(),
    }
}

/// Older tombstone first, then more tombstones, then lower file id.
fn tombstone_rank(f: &FileRef) -> (u64, std::cmp::Reverse<u64>, u64) {
    (f.meta.age_anchor_seqnum.unwrap_or(u64::MAX), std::cmp::Reverse(f.meta.tombstone_count()), f.meta.file_id)
}

fn by_b_then_oldest(a: &FileRef, b: &FileRef) -> std::cmp::Ordering {
    b.meta.b_f.total_cmp(&a.meta.b_f).then_with(|| tombstone_rank(a).cmp(&tombstone_rank(b)))
}

/// Chooses the next compaction, if any. TTL expiry wins over saturation;
/// among levels the smallest wins.
pub fn evaluate_triggers(
    version: &Version,
    now: u64,
    ttls: Option<&TtlSchedule>,
    ring: &TimeRing,
    cfg: &PlannerConfig,
) -> Option<CompactionPlan> {
    let deepest = version.deepest_level();
    if cfg.fade_enabled {
        if let Some(ttls) = ttls {
            for level in 1..=deepest {
                let mut expired: Vec<&FileRef> = version
                    .level(level)
                    .iter()
                    .filter(|f| is_expired(f, level, ttls, ring, now, cfg.ingest_rate))
                    .collect();
                if !expired.is_empty() {
                    expired.sort_by(|a, b| by_b_then_oldest(a, b));
                    return Some(plan_for(version, Trigger::TtlExpiry, SelectionMode::Dd, level, expired[0]));
                }
            }
        }
    }
    for level in 1..=deepest {
        if version.level_bytes(level) <= cfg.capacity(level) {
            continue;
        }
        let files = version.level(level);
        let mode = if cfg.fade_enabled { cfg.saturation_mode } else { SelectionMode::So };
        let chosen = match mode {
            SelectionMode::Sd => files.iter().min_by(|a, b| by_b_then_oldest(a, b)),
            _ => files.iter().min_by_key(|f| {
                let n = overlapping(version, level + 1, f.meta.min_sort_key, f.meta.max_sort_key).len();
                (n, std::cmp::Reverse(f.meta.tombstone_count()), f.meta.min_sort_key)
            }),
        }?;
        return Some(plan_for(version, Trigger::Saturation, mode, level, chosen));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entry::{Entry, RangeTombstone};
    use crate::histogram::BUCKETS;
    use crate::layout::{build_file, LayoutConfig};
    use crate::store::MemStore;
    use std::sync::Arc;

    #[test]
    fn single_level_takes_whole_budget() {
        let s = compute_ttls(100.0, 10.0, 1).unwrap();
        assert_eq!(s.d, vec![100.0]);
    }

    #[test]
    fn two_levels_geometric() {
        let s = compute_ttls(110.0, 10.0, 2).unwrap();
        assert!((s.d[0] - 10.0).abs() < 1e-9 && (s.d[1] - 100.0).abs() < 1e-9);
        assert!((s.sum() - 110.0).abs() < 1e-9);
    }

    #[test]
    fn growing_tree_shrinks_ttls_by_closed_form_ratio() {
        let (t, k) = (4.0f64, 3usize);
        let a = compute_ttls(64.0, t, k).unwrap();
        let b = compute_ttls(64.0, t, k + 1).unwrap();
        let ratio = (t.powi(k as i32) - 1.0) / (t.powi(k as i32 + 1) - 1.0);
        for i in 0..k {
            assert!((b.d[i] / a.d[i] - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(compute_ttls(10.0, 1.0, 2).is_err());
        assert!(compute_ttls(0.0, 10.0, 2).is_err());
        assert!(compute_ttls(10.0, 10.0, 0).is_err());
    }

    fn small_cfg() -> LayoutConfig {
        LayoutConfig { entry_size: 64, pages_per_file: 64, ..Default::default() }
    }

    fn file(store: &MemStore, id: u64, entries: Vec<Entry>, rts: Vec<RangeTombstone>) -> SstFile {
        let built = build_file(entries, &small_cfg()).unwrap();
        SstFile::create(store, id, built, rts, vec![0; BUCKETS], 4096).unwrap()
    }

    #[test]
    fn delete_meta_examples() {
        let store = MemStore::new();
        let mut ring = TimeRing::default();
        for s in 0..100 {
            ring.record(s, s * 4);
        }
        let h = Histogram::new(1 << 16);

        let clean = file(&store, 1, (0..10).map(|k| Entry::put(k, 0, k, vec![])).collect(), vec![]);
        let m = update_file_meta(&clean, &h, &ring, 400, 4);
        assert_eq!((m.a_f, m.p_f, m.b_f), (0.0, 0, 0.0));

        let tombs = file(&store, 2, (0..5).map(|k| Entry::tombstone(k, 0, 10 + k)).collect(), vec![]);
        let m = update_file_meta(&tombs, &h, &ring, 400, 4);
        assert_eq!(m.p_f, 5);
        assert_eq!(m.b_f, 5.0);
        // oldest tombstone seq 10 inserted at tick 40; now 400, 4 ticks per second
        assert!((m.a_f - 90.0).abs() < 1e-9);

        // histogram with 1000 entries in the buckets spanned by the range tombstone
        let mut h = Histogram::new(256 * 100 - 1);
        h.counts[2] = 400;
        h.counts[3] = 600;
        h.counts[9] = 5000;
        let rt = RangeTombstone { lo: 200, hi: 400, seqnum: 50, delete_key: 0 };
        let f = file(&store, 3, vec![Entry::tombstone(1000, 0, 20), Entry::tombstone(1001, 0, 21)], vec![rt]);
        let m = update_file_meta(&f, &h, &ring, 400, 4);
        assert_eq!(m.p_f, 2);
        assert!((m.b_f - 1002.0).abs() < 1e-9);
    }

    fn version_of(levels: Vec<Vec<SstFile>>) -> Version {
        let mut v =
            Version { number: 1, levels: levels.into_iter().map(|l| l.into_iter().map(Arc::new).collect()).collect() };
        v.normalize();
        v
    }

    fn range_file(store: &MemStore, id: u64, level: u32, lo: u64, hi: u64, tomb_seq: Option<u64>) -> SstFile {
        let mut entries: Vec<Entry> = (lo..hi).map(|k| Entry::put(k, 0, id * 1000 + k, vec![0; 20])).collect();
        if let Some(s) = tomb_seq {
            entries[0] = Entry::tombstone(lo, 0, s);
        }
        let mut f = file(store, id, entries, vec![]);
        f.meta.level = level;
        f.meta.b_f = f.meta.num_point_tombstones as f64;
        f
    }

    fn planner(fade: bool) -> PlannerConfig {
        PlannerConfig {
            buffer_bytes: 1 << 30,
            size_ratio: 10,
            fade_enabled: fade,
            saturation_mode: SelectionMode::So,
            ingest_rate: 1,
        }
    }

    #[test]
    fn quiet_tree_has_no_plan() {
        let store = MemStore::new();
        let v = version_of(vec![vec![range_file(&store, 1, 1, 0, 10, None)]]);
        let ttls = compute_ttls(100.0, 10.0, 1).unwrap();
        assert!(evaluate_triggers(&v, 5, Some(&ttls), &TimeRing::default(), &planner(true)).is_none());
    }

    #[test]
    fn expired_file_in_unsaturated_level_gets_dd() {
        let store = MemStore::new();
        let v = version_of(vec![
            vec![],
            vec![range_file(&store, 1, 2, 0, 10, Some(3)), range_file(&store, 2, 2, 20, 30, None)],
            vec![range_file(&store, 3, 3, 0, 30, None)],
        ]);
        let mut ring = TimeRing::default();
        ring.record(0, 0);
        let ttls = compute_ttls(30.0, 2.0, 2).unwrap(); // d = [10, 20]
                                                        // level 2 budget is 30 seconds
        assert!(evaluate_triggers(&v, 30, Some(&ttls), &ring, &planner(true)).is_none());
        let plan = evaluate_triggers(&v, 31, Some(&ttls), &ring, &planner(true)).unwrap();
        assert_eq!(plan.trigger, Trigger::TtlExpiry);
        assert_eq!(plan.mode, SelectionMode::Dd);
        assert_eq!(plan.chosen, 1);
        assert_eq!(plan.targets, vec![3]);
        // classic mode ignores TTLs
        assert!(evaluate_triggers(&v, 31, Some(&ttls), &ring, &planner(false)).is_none());
    }

    #[test]
    fn so_picks_least_overlap() {
        let store = MemStore::new();
        let v = version_of(vec![
            vec![],
            vec![range_file(&store, 1, 2, 0, 30, None), range_file(&store, 2, 2, 100, 110, None)],
            vec![
                range_file(&store, 3, 3, 0, 9, None),
                range_file(&store, 4, 3, 10, 19, None),
                range_file(&store, 5, 3, 20, 29, None),
                range_file(&store, 6, 3, 100, 120, None),
            ],
        ]);
        let mut cfg = planner(false);
        cfg.buffer_bytes = 1;
        cfg.size_ratio = 2;
        let plan = evaluate_triggers(&v, 0, None, &TimeRing::default(), &cfg).unwrap();
        assert_eq!(plan.source_level, 2);
        assert_eq!(plan.chosen, 2);
        assert_eq!(plan.targets, vec![6]);
    }

    #[test]
    fn dd_beats_saturation() {
        let store = MemStore::new();
        let v = version_of(vec![
            vec![range_file(&store, 1, 1, 0, 50, None)],
            vec![range_file(&store, 2, 2, 0, 10, Some(1))],
            vec![range_file(&store, 3, 3, 0, 10, None)],
        ]);
        let mut ring = TimeRing::default();
        ring.record(0, 0);
        let ttls = compute_ttls(10.0, 2.0, 2).unwrap();
        let mut cfg = planner(true);
        cfg.buffer_bytes = 1;
        let plan = evaluate_triggers(&v, 100, Some(&ttls), &ring, &cfg).unwrap();
        assert_eq!(plan.trigger, Trigger::TtlExpiry);
        assert_eq!(plan.chosen, 2);
    }

    #[test]
    fn sd_picks_highest_b_then_oldest() {
        let store = MemStore::new();
        let a = range_file(&store, 1, 2, 0, 10, Some(50));
        let mut b = range_file(&store, 2, 2, 20, 30, Some(40));
        let mut c = range_file(&store, 3, 2, 40, 50, Some(30));
        b.meta.b_f = 7.0;
        c.meta.b_f = 7.0;
        let v = version_of(vec![vec![], vec![a, b, c]]);
        let mut cfg = planner(true);
        cfg.buffer_bytes = 1;
        cfg.saturation_mode = SelectionMode::Sd;
        let plan = evaluate_triggers(&v, 0, None, &TimeRing::default(), &cfg).unwrap();
        assert_eq!(plan.mode, SelectionMode::Sd);
        assert_eq!(plan.chosen, 3);
    }
}
