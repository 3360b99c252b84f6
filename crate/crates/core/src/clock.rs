//! Logical time. One tick per ingested operation by default; a logical
//! second is `ingest_rate` ticks.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub trait Clock: Send + Sync + std::fmt::Debug {
    fn now(&self) -> u64;
    /// Called once per ingested operation.
    fn on_ingest(&self) {}
    /// Resume from a persisted time after reopening.
    fn restore(&self, _t: u64) {}
}

/// Advances one tick per ingested operation.
#[derive(Debug, Default)]
pub struct IngestClock(AtomicU64);

impl Clock for IngestClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
    fn on_ingest(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
    fn restore(&self, t: u64) {
        self.0.fetch_max(t, Ordering::Relaxed);
    }
}

/// Driven entirely by the caller.
#[derive(Debug, Default, Clone)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(t: u64) -> Self {
        ManualClock(Arc::new(AtomicU64::new(t)))
    }
    pub fn set(&self, t: u64) {
        self.0.store(t, Ordering::Relaxed);
    }
    pub fn advance(&self, dt: u64) {
        self.0.fetch_add(dt, Ordering::Relaxed);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Maps seqnums to the logical time they were assigned, so a tombstone's
/// insertion time can be recovered from its seqnum alone.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TimeRing {
    samples: Vec<(u64, u64)>,
}

impl TimeRing {
    pub fn record(&mut self, seq: u64, time: u64) {
        match self.samples.last() {
            Some(&(_, t)) if t == time => {}
            _ => self.samples.push((seq, time)),
        }
    }

    /// Time of the latest sample at or before `seq`.
    pub fn time_of(&self, seq: u64) -> u64 {
        match self.samples.partition_point(|&(s, _)| s <= seq) {
            0 => self.samples.first().map_or(0, |&(_, t)| t),
            n => self.samples[n - 1].1,
        }
    }

    pub fn samples_since(&self, seq: u64) -> &[(u64, u64)] {
        let i = self.samples.partition_point(|&(s, _)| s < seq);
        &self.samples[i..]
    }

    pub fn extend(&mut self, samples: &[(u64, u64)]) {
        for &(s, t) in samples {
            if self.samples.last().is_none_or(|&(ls, _)| s > ls) {
                self.record(s, t);
            }
        }
    }

    /// Drops samples no longer needed to resolve seqnums `>= min_seq`.
    pub fn prune_before(&mut self, min_seq: u64) {
        let keep = self.samples.partition_point(|&(s, _)| s <= min_seq).saturating_sub(1);
        self.samples.drain(..keep);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
