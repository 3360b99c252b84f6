//! I/O counters and derived amplification metrics.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

macro_rules! counters {
    ($($name:ident),* $(,)?) => {
        /// Live counters, bumped from any thread.
        #[derive(Debug, Default)]
        pub struct IoStats {
            $(pub $name: AtomicU64,)*
        }

        /// Point-in-time copy of [`IoStats`].
        #[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
        pub struct IoSnapshot {
            $(pub $name: u64,)*
        }

        impl IoStats {
            pub fn snapshot(&self) -> IoSnapshot {
                IoSnapshot { $($name: self.$name.load(Ordering::Relaxed),)* }
            }

            pub fn restore(&self, s: &IoSnapshot) {
                $(self.$name.store(s.$name, Ordering::Relaxed);)*
            }
        }

        impl IoSnapshot {
            pub const FIELDS: &'static [&'static str] = &[$(stringify!($name),)*];

            pub fn values(&self) -> Vec<u64> {
                vec![$(self.$name,)*]
            }

            /// Field-wise `self - earlier`.
            pub fn since(&self, earlier: &IoSnapshot) -> IoSnapshot {
                IoSnapshot { $($name: self.$name.saturating_sub(earlier.$name),)* }
            }
        }
    };
}

counters!(
    pages_read,
    pages_written,
    filter_probes,
    hash_computations,
    bytes_flushed,
    bytes_compaction_read,
    bytes_compaction_written,
    bytes_compacted,
    compactions,
    ttl_compactions,
    moves,
    flushes,
    full_drops,
    partial_edits,
    emptied_pages,
    srd_pages_read,
    point_lookups,
    lookup_pages_read,
    range_scans,
    tombstones_inserted,
    range_tombstones_inserted,
    blind_deletes_suppressed,
    tombstones_dropped,
    wal_purges,
);

impl IoStats {
    pub fn add(&self, counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Ordering::Relaxed);
    }
}

#[inline]
pub(crate) fn bump(counter: &AtomicU64, n: u64) {
    counter.fetch_add(n, Ordering::Relaxed);
}

/// One stored version of a key, as seen by the space-amplification scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VersionRecord {
    pub sort_key: u64,
    pub seqnum: u64,
    pub bytes: u64,
    pub is_put: bool,
}

/// A stored range tombstone for the space-amplification scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RangeRecord {
    pub lo: u64,
    pub hi: u64,
    pub seqnum: u64,
    pub bytes: u64,
}

/// `(total bytes - unique live bytes) / unique live bytes`.
///
/// A key is live when its newest version is a put that no newer range
/// tombstone covers. Fails with `EmptyTree` when nothing is stored; returns
/// `f64::INFINITY` when entries exist but none is live.
pub fn compute_space_amp(mut versions: Vec<VersionRecord>, ranges: &[RangeRecord]) -> Result<f64> {
    if versions.is_empty() && ranges.is_empty() {
        return Err(Error::EmptyTree);
    }
    let total: u64 = versions.iter().map(|v| v.bytes).sum::<u64>() + ranges.iter().map(|r| r.bytes).sum::<u64>();
    versions.sort_unstable_by(|a, b| a.sort_key.cmp(&b.sort_key).then(b.seqnum.cmp(&a.seqnum)));
    let mut ranges = ranges.to_vec();
    ranges.sort_unstable_by_key(|r| r.lo);
    let mut live = 0u64;
    let mut last_key = None;
    for v in &versions {
        if last_key == Some(v.sort_key) {
            continue;
        }
        last_key = Some(v.sort_key);
        if !v.is_put {
            continue;
        }
        let end = ranges.partition_point(|r| r.lo <= v.sort_key);
        let shadowed = ranges[..end].iter().any(|r| r.hi > v.sort_key && r.seqnum > v.seqnum);
        if !shadowed {
            live += v.bytes;
        }
    }
    if live == 0 {
        return Ok(f64::INFINITY);
    }
    Ok((total - live) as f64 / live as f64)
}

/// Bytes rewritten by compaction per byte of newly flushed data; 0 before
/// the first flush.
pub fn compute_write_amp(io: &IoSnapshot) -> f64 {
    if io.bytes_flushed == 0 {
        return 0.0;
    }
    io.bytes_compaction_written as f64 / io.bytes_flushed as f64
}

/// Mean and maximum pages read over a set of queries.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PageReadSummary {
    pub count: u64,
    pub mean_pages: f64,
    pub max_pages: u64,
}

impl PageReadSummary {
    pub fn from_samples(pages: &[u64]) -> Self {
        if pages.is_empty() {
            return PageReadSummary::default();
        }
        PageReadSummary {
            count: pages.len() as u64,
            mean_pages: pages.iter().sum::<u64>() as f64 / pages.len() as f64,
            max_pages: pages.iter().copied().max().unwrap_or(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn put(k: u64, s: u64, bytes: u64) -> VersionRecord {
        VersionRecord { sort_key: k, seqnum: s, bytes, is_put: true }
    }

    #[test]
    fn unique_keys_have_zero_amp() {
        let v = (0..50).map(|k| put(k, k, 100)).collect();
        assert_eq!(compute_space_amp(v, &[]).unwrap(), 0.0);
    }

    #[test]
    fn repeated_updates() {
        let n = 7;
        let v = (0..n).map(|s| put(42, s, 256)).collect();
        assert!((compute_space_amp(v, &[]).unwrap() - (n - 1) as f64).abs() < 1e-12);
    }

    #[test]
    fn tombstone_over_old_version() {
        let v =
            vec![put(1, 1, 1024), put(2, 2, 1024), VersionRecord { sort_key: 2, seqnum: 3, bytes: 100, is_put: false }];
        let amp = compute_space_amp(v, &[]).unwrap();
        assert!((amp - 1124.0 / 1024.0).abs() < 1e-12);
        assert!((amp - 1.098).abs() < 1e-3);
    }

    #[test]
    fn range_tombstone_shadows_older_puts_only() {
        let v = vec![put(1, 1, 10), put(2, 5, 10), put(3, 1, 10)];
        let r = [RangeRecord { lo: 1, hi: 3, seqnum: 3, bytes: 45 }];
        // key 1 shadowed, key 2 newer than the tombstone, key 3 outside
        let amp = compute_space_amp(v, &r).unwrap();
        assert!((amp - (75.0 - 20.0) / 20.0).abs() < 1e-12);
    }

    #[test]
    fn empty_tree_errors() {
        assert!(matches!(compute_space_amp(vec![], &[]), Err(Error::EmptyTree)));
    }

    #[test]
    fn write_amp_examples() {
        let mut s = IoSnapshot::default();
        assert_eq!(compute_write_amp(&s), 0.0);
        s.bytes_flushed = 4096;
        assert_eq!(compute_write_amp(&s), 0.0);
        s.bytes_compaction_written = 4096;
        assert_eq!(compute_write_amp(&s), 1.0);
    }

    #[test]
    fn snapshot_and_restore() {
        let a = IoStats::default();
        a.add(&a.pages_read, 3);
        bump(&a.flushes, 1);
        let s = a.snapshot();
        let b = IoStats::default();
        b.restore(&s);
        assert_eq!(b.snapshot(), s);
        assert_eq!(s.since(&IoSnapshot::default()).pages_read, 3);
        assert_eq!(IoSnapshot::FIELDS.len(), s.values().len());
    }
}
