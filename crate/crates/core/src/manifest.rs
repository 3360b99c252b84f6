//! Versioned tree description and its append-only record log.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::codec::{frame, unframe, Dec, Enc};
use crate::error::{Error, Result};
use crate::histogram::Histogram;
use crate::sstable::FileRef;
use crate::store::Store;

pub const MANIFEST_NAME: &str = "MANIFEST";

/// Immutable snapshot of the levels. `levels[0]` is Level 1.
#[derive(Debug, Clone, Default)]
pub struct Version {
    pub number: u64,
    pub levels: Vec<Vec<FileRef>>,
}

impl Version {
    pub fn level(&self, level: usize) -> &[FileRef] {
        level.checked_sub(1).and_then(|i| self.levels.get(i)).map_or(&[], |v| v.as_slice())
    }

    /// Deepest level holding at least one file, 0 for an empty tree.
    pub fn deepest_level(&self) -> usize {
        self.levels.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1)
    }

    pub fn files(&self) -> impl Iterator<Item = &FileRef> {
        self.levels.iter().flatten()
    }

    pub fn level_bytes(&self, level: usize) -> u64 {
        self.level(level).iter().map(|f| f.meta.entry_bytes).sum()
    }

    pub fn file_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// Tree-wide key histogram, optionally leaving one file out.
    pub fn histogram(&self, key_space: u64, exclude: Option<u64>) -> Histogram {
        let mut h = Histogram::new(key_space);
        for f in self.files().filter(|f| Some(f.meta.file_id) != exclude) {
            h.add(&f.histogram);
        }
        h
    }

    /// Level 1 newest first; deeper levels by sort key.
    pub fn normalize(&mut self) {
        for (i, level) in self.levels.iter_mut().enumerate() {
            if i == 0 {
                level.sort_by_key(|f| std::cmp::Reverse(f.meta.max_seqnum));
            } else {
                level.sort_by_key(|f| f.meta.min_sort_key);
            }
        }
        while self.levels.last().is_some_and(|l| l.is_empty()) {
            self.levels.pop();
        }
    }

    /// Sort-key ranges are pairwise disjoint in every level below Level 1.
    pub fn check_disjoint(&self) -> std::result::Result<(), String> {
        for (i, level) in self.levels.iter().enumerate().skip(1) {
            for w in level.windows(2) {
                if w[0].meta.max_sort_key >= w[1].meta.min_sort_key {
                    return Err(format!(
                        "level {}: files {} and {} overlap",
                        i + 1,
                        w[0].meta.file_id,
                        w[1].meta.file_id
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RecordKind {
    Flush = 1,
    Compaction = 2,
    PageDrop = 3,
    TtlUpdate = 4,
    Move = 5,
}

impl RecordKind {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            1 => RecordKind::Flush,
            2 => RecordKind::Compaction,
            3 => RecordKind::PageDrop,
            4 => RecordKind::TtlUpdate,
            5 => RecordKind::Move,
            _ => return Err(Error::corrupt(format!("unknown manifest record {v}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilePlacement {
    pub file_id: u64,
    pub level: u32,
    pub arrival: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub kind: RecordKind,
    pub version: u64,
    pub now: u64,
    pub next_seqnum: u64,
    pub flushed_seqnum: u64,
    pub next_file_id: u64,
    pub removed: Vec<u64>,
    /// New files, or files whose placement or footer changed.
    pub added: Vec<FilePlacement>,
    pub ttls: Vec<f64>,
    /// (seqnum, time) samples taken since the previous record.
    pub time_samples: Vec<(u64, u64)>,
}

impl ManifestRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.u8(self.kind as u8)
            .u64(self.version)
            .u64(self.now)
            .u64(self.next_seqnum)
            .u64(self.flushed_seqnum)
            .u64(self.next_file_id);
        e.u32(self.removed.len() as u32);
        for id in &self.removed {
            e.u64(*id);
        }
        e.u32(self.added.len() as u32);
        for p in &self.added {
            e.u64(p.file_id).u32(p.level).u64(p.arrival);
        }
        e.u32(self.ttls.len() as u32);
        for t in &self.ttls {
            e.f64(*t);
        }
        e.u32(self.time_samples.len() as u32);
        for (s, t) in &self.time_samples {
            e.u64(*s).u64(*t);
        }
        e.buf
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut d = Dec::new(buf);
        let kind = RecordKind::from_u8(d.u8()?)?;
        let version = d.u64()?;
        let now = d.u64()?;
        let next_seqnum = d.u64()?;
        let flushed_seqnum = d.u64()?;
        let next_file_id = d.u64()?;
        let removed = (0..d.u32()?).map(|_| d.u64()).collect::<Result<_>>()?;
        let n = d.u32()?;
        let mut added = Vec::with_capacity(n as usize);
        for _ in 0..n {
            added.push(FilePlacement { file_id: d.u64()?, level: d.u32()?, arrival: d.u64()? });
        }
        let ttls = (0..d.u32()?).map(|_| d.f64()).collect::<Result<_>>()?;
        let n = d.u32()?;
        let mut time_samples = Vec::with_capacity(n as usize);
        for _ in 0..n {
            time_samples.push((d.u64()?, d.u64()?));
        }
        Ok(ManifestRecord {
            kind,
            version,
            now,
            next_seqnum,
            flushed_seqnum,
            next_file_id,
            removed,
            added,
            ttls,
            time_samples,
        })
    }
}

/// State reconstructed by replaying the log.
#[derive(Debug, Clone, Default)]
pub struct ReplayedState {
    pub version: u64,
    pub now: u64,
    pub next_seqnum: u64,
    pub flushed_seqnum: u64,
    pub next_file_id: u64,
    pub files: BTreeMap<u64, FilePlacement>,
    pub ttls: Vec<f64>,
    pub time_samples: Vec<(u64, u64)>,
    pub records: usize,
}

#[derive(Debug)]
pub struct ManifestLog {
    store: Arc<dyn Store>,
    sync: bool,
}

impl ManifestLog {
    pub fn new(store: Arc<dyn Store>, sync: bool) -> Self {
        ManifestLog { store, sync }
    }

    pub fn exists(&self) -> bool {
        self.store.exists(MANIFEST_NAME)
    }

    pub fn append(&self, record: &ManifestRecord) -> Result<()> {
        self.store.append(MANIFEST_NAME, &frame(&record.encode()))?;
        if self.sync {
            self.store.sync(MANIFEST_NAME)?;
        }
        Ok(())
    }

    pub fn replay(&self) -> Result<ReplayedState> {
        let mut st = ReplayedState { next_file_id: 1, next_seqnum: 1, ..Default::default() };
        if !self.exists() {
            return Ok(st);
        }
        let data = self.store.read_all(MANIFEST_NAME)?;
        for payload in unframe(&data) {
            let r = ManifestRecord::decode(payload)?;
            if r.version <= st.version && st.records > 0 {
                return Err(Error::corrupt("manifest versions not increasing"));
            }
            st.version = r.version;
            st.now = st.now.max(r.now);
            st.next_seqnum = st.next_seqnum.max(r.next_seqnum);
            st.flushed_seqnum = st.flushed_seqnum.max(r.flushed_seqnum);
            st.next_file_id = st.next_file_id.max(r.next_file_id);
            for id in &r.removed {
                st.files.remove(id);
            }
            for p in &r.added {
                st.files.insert(p.file_id, *p);
            }
            if !r.ttls.is_empty() || r.kind == RecordKind::TtlUpdate {
                st.ttls = r.ttls.clone();
            }
            st.time_samples.extend_from_slice(&r.time_samples);
            st.records += 1;
        }
        Ok(st)
    }
}
