//! Deterministic synthetic workloads: uniform updates and deletes on
//! previously inserted keys, followed (by default) by a lookup phase.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// How delete keys relate to sort keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Correlation {
    /// Keys arrive in random order and the delete key is the ingest tick,
    /// so the two keys are uncorrelated.
    #[default]
    Independent,
    /// Delete key equals sort key.
    Equal,
}

impl std::str::FromStr for Correlation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Correlation::Independent),
            "equal" => Ok(Correlation::Equal),
            _ => Err(Error::InvalidSpec(format!("unknown correlation {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Seconds(f64),
    /// Fraction of the ingestion phase's logical duration.
    FractionOfRun(f64),
}

/// Operation mix; fractions of `total_ops`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mix {
    pub updates: f64,
    pub point_lookups: f64,
    pub empty_point_lookups: f64,
    pub short_range_lookups: f64,
    pub long_range_lookups: f64,
    pub point_deletes: f64,
    pub range_deletes: f64,
    pub secondary_range_deletes: f64,
}

impl Mix {
    fn parts(&self) -> [f64; 8] {
        [
            self.updates,
            self.point_deletes,
            self.range_deletes,
            self.secondary_range_deletes,
            self.point_lookups,
            self.empty_point_lookups,
            self.short_range_lookups,
            self.long_range_lookups,
        ]
    }

    pub fn ingest_fraction(&self) -> f64 {
        self.updates + self.point_deletes + self.range_deletes + self.secondary_range_deletes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub total_ops: u64,
    pub mix: Mix,
    /// Selectivity of primary range deletes, as a fraction of the key domain.
    pub range_delete_selectivity: f64,
    /// Selectivity of secondary range deletes, as a fraction of the
    /// delete-key domain seen so far.
    pub secondary_delete_selectivity: f64,
    /// Number of keys returned by short and long scans, on average.
    pub short_scan_keys: u64,
    pub long_scan_keys: u64,
    pub key_domain: u64,
    /// Total bytes per entry, header included.
    pub entry_size: usize,
    pub correlation: Correlation,
    pub seed: u64,
    pub threshold: Threshold,
    /// Issue every lookup after ingestion finishes.
    pub lookups_after_ingest: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            total_ops: 1 << 16,
            mix: Mix { updates: 0.5, point_lookups: 0.5, ..Default::default() },
            range_delete_selectivity: 0.001,
            secondary_delete_selectivity: 1.0 / 16.0,
            short_scan_keys: 16,
            long_scan_keys: 1024,
            key_domain: 1 << 40,
            entry_size: 256,
            correlation: Correlation::Independent,
            seed: 7,
            threshold: Threshold::FractionOfRun(0.25),
            lookups_after_ingest: true,
        }
    }
}

impl WorkloadSpec {
    /// Desk-scale YCSB-A variant: ingest `dataset_bytes` of updates and
    /// deletes (`delete_fraction` of the ingestion), then as many point
    /// lookups on inserted keys.
    pub fn ycsb_a(
        dataset_bytes: u64,
        entry_size: usize,
        delete_fraction: f64,
        threshold: Threshold,
        seed: u64,
    ) -> Self {
        let ingest = dataset_bytes / entry_size as u64;
        WorkloadSpec {
            total_ops: ingest * 2,
            mix: Mix {
                updates: 0.5 * (1.0 - delete_fraction),
                point_deletes: 0.5 * delete_fraction,
                point_lookups: 0.5,
                ..Default::default()
            },
            entry_size,
            seed,
            threshold,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = self.mix.parts();
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidSpec("mix fractions must lie in [0, 1]".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("mix fractions sum to {sum}, not 1")));
        }
        if self.key_domain < 2 {
            return Err(Error::InvalidSpec("key domain too small".into()));
        }
        if self.entry_size <= crate::entry::ENTRY_HEADER_BYTES + 8 {
            return Err(Error::InvalidSpec("entry size must leave room for an 8-byte value".into()));
        }
        match self.threshold {
            Threshold::Seconds(s) if s > 0.0 => {}
            Threshold::FractionOfRun(f) if f > 0.0 => {}
            t => return Err(Error::InvalidSpec(format!("threshold must be positive, got {t:?}"))),
        }
        for s in [self.range_delete_selectivity, self.secondary_delete_selectivity] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidSpec("selectivity must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Applies `workload.*` pairs; other keys are ignored.
    pub fn apply(&mut self, pairs: &std::collections::BTreeMap<String, String>) -> Result<()> {
        for (k, v) in pairs {
            if let Some(key) = k.strip_prefix("workload.") {
                self.set(key, v)?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidSpec(format!("{key}: cannot parse {v:?}")))
        }
        let m = &mut self.mix;
        match key {
            "total_ops" => self.total_ops = parse(key, value)?,
            "updates" => m.updates = parse(key, value)?,
            "point_lookups" => m.point_lookups = parse(key, value)?,
            "empty_point_lookups" => m.empty_point_lookups = parse(key, value)?,
            "short_range_lookups" => m.short_range_lookups = parse(key, value)?,
            "long_range_lookups" => m.long_range_lookups = parse(key, value)?,
            "point_deletes" => m.point_deletes = parse(key, value)?,
            "range_deletes" => m.range_deletes = parse(key, value)?,
            "secondary_range_deletes" => m.secondary_range_deletes = parse(key, value)?,
            "range_delete_selectivity" => self.range_delete_selectivity = parse(key, value)?,
            "secondary_delete_selectivity" => self.secondary_delete_selectivity = parse(key, value)?,
            "short_scan_keys" => self.short_scan_keys = parse(key, value)?,
            "long_scan_keys" => self.long_scan_keys = parse(key, value)?,
            "key_domain" => self.key_domain = parse(key, value)?,
            "entry_size" => self.entry_size = parse(key, value)?,
            "correlation" => self.correlation = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "threshold_s" => self.threshold = Threshold::Seconds(parse(key, value)?),
            "threshold_fraction" => self.threshold = Threshold::FractionOfRun(parse(key, value)?),
            "lookups_after_ingest" => self.lookups_after_ingest = parse(key, value)?,
            _ => return Err(Error::InvalidSpec(format!("unknown workload key {key}"))),
        }
        Ok(())
    }

    pub fn ingest_ops(&self) -> u64 {
        (self.total_ops as f64 * self.mix.ingest_fraction()).round() as u64
    }

    /// Threshold in logical seconds at `ingest_rate` operations per second.
    pub fn threshold_seconds(&self, ingest_rate: u64) -> f64 {
        match self.threshold {
            Threshold::Seconds(s) => s,
            Threshold::FractionOfRun(f) => f * self.ingest_ops() as f64 / ingest_rate as f64,
        }
    }

    pub fn value_len(&self) -> usize {
        self.entry_size - crate::entry::ENTRY_HEADER_BYTES
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkloadOp {
    Put {
        key: u64,
        delete_key: u64,
        tag: u64,
    },
    Delete {
        key: u64,
        delete_key: u64,
    },
    RangeDelete {
        lo: u64,
        hi: u64,
    },
    SecondaryRangeDelete {
        lo: u64,
        hi: u64,
    },
    Get {
        key: u64,
    },
    /// Lookup on a key that was never inserted.
    GetAbsent {
        key: u64,
    },
    Scan {
        lo: u64,
        hi: u64,
    },
}

impl WorkloadOp {
    pub fn is_ingest(&self) -> bool {
        matches!(
            self,
            WorkloadOp::Put { .. }
                | WorkloadOp::Delete { .. }
                | WorkloadOp::RangeDelete { .. }
                | WorkloadOp::SecondaryRangeDelete { .. }
        )
    }
}

/// Value bytes for a put: the tag followed by filler.
pub fn value_for(tag: u64, len: usize) -> Vec<u8> {
    let mut v = vec![0xa5; len.max(8)];
    v[..8].copy_from_slice(&tag.to_le_bytes());
    v.truncate(len.max(8));
    v
}

/// Keys currently live, with O(1) uniform sampling and removal.
#[derive(Debug, Default)]
struct LiveSet {
    keys: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl LiveSet {
    fn insert(&mut self, k: u64) {
        if let std::collections::hash_map::Entry::Vacant(e) = self.index.entry(k) {
            e.insert(self.keys.len());
            self.keys.push(k);
        }
    }

    fn remove(&mut self, k: u64) {
        if let Some(i) = self.index.remove(&k) {
            let last = self.keys.pop().unwrap();
            if i < self.keys.len() {
                self.keys[i] = last;
                self.index.insert(last, i);
            }
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Option<u64> {
        (!self.keys.is_empty()).then(|| self.keys[rng.gen_range(0..self.keys.len())])
    }
}

/// Stream of operations for a spec. Identical seeds give identical streams.
#[derive(Debug)]
pub struct Workload {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    live: LiveSet,
    ever: HashSet<u64>,
    ingest_left: u64,
    lookups_left: u64,
    tick: u64,
    secondary_cut: u64,
    tag: u64,
}

impl Workload {
    pub fn new(spec: WorkloadSpec) -> Result<Self> {
        spec.validate()?;
        let ingest = spec.ingest_ops();
        Ok(Workload {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            live: LiveSet::default(),
            ever: HashSet::new(),
            ingest_left: ingest,
            lookups_left: spec.total_ops - ingest,
            tick: 0,
            secondary_cut: 0,
            tag: 0,
            spec,
        })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    fn pick(&mut self, parts: &[f64]) -> usize {
        let total: f64 = parts.iter().sum();
        let mut x = self.rng.gen::<f64>() * total;
        for (i, p) in parts.iter().enumerate() {
            if x < *p {
                return i;
            }
            x -= p;
        }
        parts.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    fn ingest_op(&mut self) -> WorkloadOp {
        let m = self.spec.mix;
        let choice = self.pick(&[m.updates, m.point_deletes, m.range_deletes, m.secondary_range_deletes]);
        self.tick += 1;
        let domain = self.spec.key_domain;
        match choice {
            1 if !self.live.keys.is_empty() => {
                let key = self.live.sample(&mut self.rng).unwrap();
                self.live.remove(key);
                WorkloadOp::Delete { key, delete_key: self.delete_key(key) }
            }
            2 => {
                let width = ((domain as f64 * self.spec.range_delete_selectivity) as u64).max(1);
                let lo = self.rng.gen_range(0..domain.saturating_sub(width).max(1));
                let hi = lo + width;
                let doomed: Vec<u64> = self.live.keys.iter().copied().filter(|k| (lo..hi).contains(k)).collect();
                for k in doomed {
                    self.live.remove(k);
                }
                WorkloadOp::RangeDelete { lo, hi }
            }
            3 => {
                let (lo, hi) = match self.spec.correlation {
                    Correlation::Independent => {
                        let step = ((self.tick as f64 * self.spec.secondary_delete_selectivity) as u64).max(1);
                        self.secondary_cut = (self.secondary_cut + step).min(self.tick);
                        (0, self.secondary_cut.max(1))
                    }
                    Correlation::Equal => {
                        let width = ((domain as f64 * self.spec.secondary_delete_selectivity) as u64).max(1);
                        let lo = self.rng.gen_range(0..domain.saturating_sub(width).max(1));
                        (lo, lo + width)
                    }
                };
                WorkloadOp::SecondaryRangeDelete { lo, hi }
            }
            _ => {
                let key = self.rng.gen_range(0..domain);
                self.live.insert(key);
                self.ever.insert(key);
                self.tag += 1;
                WorkloadOp::Put { key, delete_key: self.delete_key(key), tag: self.tag }
            }
        }
    }

    fn delete_key(&self, key: u64) -> u64 {
        match self.spec.correlation {
            Correlation::Independent => self.tick,
            Correlation::Equal => key,
        }
    }

    fn lookup_op(&mut self) -> WorkloadOp {
        let m = self.spec.mix;
        let choice = self.pick(&[m.point_lookups, m.empty_point_lookups, m.short_range_lookups, m.long_range_lookups]);
        let domain = self.spec.key_domain;
        match choice {
            1 => loop {
                let key = self.rng.gen_range(0..domain);
                if !self.ever.contains(&key) {
                    return WorkloadOp::GetAbsent { key };
                }
            },
            2 | 3 => {
                let want = if choice == 2 { self.spec.short_scan_keys } else { self.spec.long_scan_keys };
                let density = (self.ever.len() as f64 / domain as f64).max(1e-12);
                let width = ((want as f64 / density) as u64).clamp(1, domain);
                let lo = self.rng.gen_range(0..domain - width.min(domain - 1));
                WorkloadOp::Scan { lo, hi: lo.saturating_add(width) }
            }
            _ => match self.ever.is_empty() {
                true => WorkloadOp::GetAbsent { key: self.rng.gen_range(0..domain) },
                false => {
                    // lookups target inserted keys, deleted or not
                    let key = match self.live.sample(&mut self.rng) {
                        Some(k) if self.rng.gen_bool(0.9) => k,
                        _ => self.rng.gen_range(0..domain),
                    };
                    WorkloadOp::Get { key }
                }
            },
        }
    }
}

impl Iterator for Workload {
    type Item = WorkloadOp;

    fn next(&mut self) -> Option<WorkloadOp> {
        let ingest_now = match (self.ingest_left, self.lookups_left) {
            (0, 0) => return None,
            (0, _) => false,
            (_, 0) => true,
            (i, l) => self.spec.lookups_after_ingest || self.rng.gen_range(0..i + l) < i,
        };
        if ingest_now {
            self.ingest_left -= 1;
            Some(self.ingest_op())
        } else {
            self.lookups_left -= 1;
            Some(self.lookup_op())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(deletes: f64) -> WorkloadSpec {
        WorkloadSpec {
            total_ops: 20_000,
            mix: Mix { updates: 0.5 - deletes, point_deletes: deletes, point_lookups: 0.5, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<_> = Workload::new(spec(0.05)).unwrap().collect();
        let b: Vec<_> = Workload::new(spec(0.05)).unwrap().collect();
        assert_eq!(a, b);
        let mut other = spec(0.05);
        other.seed = 8;
        let c: Vec<_> = Workload::new(other).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn delete_count_matches_fraction() {
        let ops: Vec<_> = Workload::new(spec(0.05)).unwrap().collect();
        let deletes = ops.iter().filter(|o| matches!(o, WorkloadOp::Delete { .. })).count() as f64;
        let frac = deletes / ops.len() as f64;
        assert!((frac - 0.05).abs() < 0.01, "{frac}");
        assert_eq!(ops.len(), 20_000);
    }

    #[test]
    fn deletes_target_inserted_keys_and_lookups_follow_ingest() {
        let mut seen = HashSet::new();
        let mut lookups_started = false;
        for op in Workload::new(spec(0.1)).unwrap() {
            match op {
                WorkloadOp::Put { key, .. } => {
                    assert!(!lookups_started);
                    seen.insert(key);
                }
                WorkloadOp::Delete { key, .. } => assert!(seen.contains(&key)),
                _ => lookups_started = true,
            }
        }
    }

    #[test]
    fn equal_correlation_sets_delete_key_to_sort_key() {
        let mut s = spec(0.1);
        s.correlation = Correlation::Equal;
        for op in Workload::new(s).unwrap() {
            if let WorkloadOp::Put { key, delete_key, .. } | WorkloadOp::Delete { key, delete_key } = op {
                assert_eq!(key, delete_key);
            }
        }
    }

    #[test]
    fn absent_lookups_miss() {
        let mut s = spec(0.0);
        s.key_domain = 4096;
        s.mix = Mix { updates: 0.5, empty_point_lookups: 0.5, ..Default::default() };
        let ops: Vec<_> = Workload::new(s).unwrap().collect();
        let inserted: HashSet<u64> =
            ops.iter().filter_map(|o| if let WorkloadOp::Put { key, .. } = o { Some(*key) } else { None }).collect();
        for o in &ops {
            if let WorkloadOp::GetAbsent { key } = o {
                assert!(!inserted.contains(key));
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(0.1);
        s.mix.updates = 0.9;
        assert!(matches!(Workload::new(s), Err(Error::InvalidSpec(_))));
        let mut s = spec(0.1);
        s.threshold = Threshold::Seconds(0.0);
        assert!(Workload::new(s).is_err());
    }

    #[test]
    fn settings_from_pairs() {
        let pairs =
            crate::config::parse_pairs("workload.seed = 9\nworkload.correlation = equal\nlayout.h = 4\n").unwrap();
        let mut s = WorkloadSpec::default();
        s.apply(&pairs).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.correlation, Correlation::Equal);
        assert!(s.set("nope", "1").is_err());
    }

    #[test]
    fn threshold_fraction_of_run() {
        let s = WorkloadSpec::ycsb_a(1 << 20, 256, 0.1, Threshold::FractionOfRun(0.25), 1);
        assert_eq!(s.ingest_ops(), 4096);
        assert_eq!(s.threshold_seconds(1024), 1.0);
    }
}
