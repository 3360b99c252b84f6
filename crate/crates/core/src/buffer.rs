//! In-memory write buffer. Holds the latest entry per sort key; range
//! tombstones are kept beside the map and remove older buffered keys they cover.

use std::collections::BTreeMap;

use crate::entry::{Entry, RangeTombstone};

#[derive(Debug, Clone, Default)]
pub struct WriteBuffer {
    entries: BTreeMap<u64, Entry>,
    range_tombstones: Vec<RangeTombstone>,
    bytes: usize,
    capacity: usize,
}

impl WriteBuffer {
    pub fn new(capacity: usize) -> Self {
        WriteBuffer { capacity, ..Default::default() }
    }

    /// Inserts or replaces in place.
    pub fn upsert(&mut self, entry: Entry) {
        self.bytes += entry.encoded_len();
        if let Some(old) = self.entries.insert(entry.sort_key, entry) {
            self.bytes -= old.encoded_len();
        }
    }

    pub fn add_range_tombstone(&mut self, rt: RangeTombstone) {
        let covered: Vec<u64> = self.entries.range(rt.lo..rt.hi).map(|(k, _)| *k).collect();
        for k in covered {
            let old = self.entries.remove(&k).unwrap();
            self.bytes -= old.encoded_len();
        }
        self.bytes += rt.encoded_len();
        self.range_tombstones.push(rt);
    }

    pub fn get(&self, key: u64) -> Option<&Entry> {
        self.entries.get(&key)
    }

    /// Highest seqnum among buffered range tombstones covering `key`.
    pub fn max_covering_rt(&self, key: u64) -> Option<u64> {
        self.range_tombstones.iter().filter(|r| r.covers(key)).map(|r| r.seqnum).max()
    }

    pub fn range(&self, lo: u64, hi: u64) -> impl Iterator<Item = &Entry> {
        self.entries.range(lo..hi).map(|(_, e)| e)
    }

    pub fn entries(&self) -> impl Iterator<Item = &Entry> {
        self.entries.values()
    }

    pub fn range_tombstones(&self) -> &[RangeTombstone] {
        &self.range_tombstones
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.bytes >= self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.range_tombstones.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Takes all contents, leaving the buffer empty.
    pub fn drain(&mut self) -> (Vec<Entry>, Vec<RangeTombstone>) {
        self.bytes = 0;
        let entries = std::mem::take(&mut self.entries).into_values().collect();
        (entries, std::mem::take(&mut self.range_tombstones))
    }

    pub fn max_seqnum(&self) -> Option<u64> {
        self.entries.values().map(|e| e.seqnum).chain(self.range_tombstones.iter().map(|r| r.seqnum)).max()
    }
}
