//! Write-ahead log segments and the threshold-bounded purge routine.

use std::sync::Arc;

use crate::codec::{frame, unframe, Dec, Enc};
use crate::entry::Entry;
use crate::error::{Error, Result};
use crate::store::Store;

const TAG_HEADER: u8 = 0;
const TAG_ENTRY: u8 = 1;

pub fn segment_name(id: u64) -> String {
    format!("wal-{id:010}.log")
}

fn parse_segment_name(name: &str) -> Option<u64> {
    name.strip_prefix("wal-")?.strip_suffix(".log")?.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalSegment {
    pub id: u64,
    /// Logical ticks at creation.
    pub created: u64,
    pub min_seq: u64,
    pub max_seq: u64,
    pub records: u64,
    pub bytes: u64,
}

impl WalSegment {
    fn new(id: u64, created: u64) -> Self {
        WalSegment { id, created, min_seq: u64::MAX, max_seq: 0, records: 0, bytes: 0 }
    }

    /// All records are at or below the flushed watermark.
    pub fn fully_flushed(&self, flushed_seq: u64) -> bool {
        self.records == 0 || self.max_seq <= flushed_seq
    }
}

#[derive(Debug)]
pub struct Wal {
    store: Arc<dyn Store>,
    segments: Vec<WalSegment>,
    segment_bytes: u64,
    sync: bool,
    next_id: u64,
}

impl Wal {
    /// Opens existing segments and returns every record they hold with its
    /// ingest tick, in seqnum order.
    pub fn open(store: Arc<dyn Store>, segment_bytes: u64, sync: bool) -> Result<(Wal, Vec<(Entry, u64)>)> {
        let mut segments = Vec::new();
        let mut records = Vec::new();
        for name in store.list()? {
            let Some(id) = parse_segment_name(&name) else { continue };
            let data = store.read_all(&name)?;
            let mut seg = WalSegment::new(id, 0);
            seg.bytes = data.len() as u64;
            for payload in unframe(&data) {
                let mut d = Dec::new(payload);
                match d.u8()? {
                    TAG_HEADER => seg.created = d.u64()?,
                    TAG_ENTRY => {
                        let time = d.u64()?;
                        let (e, _) = Entry::decode(d.rest())?;
                        seg.min_seq = seg.min_seq.min(e.seqnum);
                        seg.max_seq = seg.max_seq.max(e.seqnum);
                        seg.records += 1;
                        records.push((e, time));
                    }
                    t => return Err(Error::corrupt(format!("{name}: unknown wal tag {t}"))),
                }
            }
            segments.push(seg);
        }
        segments.sort_by_key(|s| s.id);
        records.sort_by_key(|(e, _)| e.seqnum);
        let next_id = segments.last().map_or(1, |s| s.id + 1);
        Ok((Wal { store, segments, segment_bytes, sync, next_id }, records))
    }

    fn start_segment(&mut self, now: u64) -> Result<()> {
        let seg = WalSegment::new(self.next_id, now);
        self.next_id += 1;
        let mut e = Enc::new();
        e.u8(TAG_HEADER).u64(now);
        let framed = frame(&e.buf);
        self.store.write_all(&segment_name(seg.id), &framed)?;
        self.segments.push(WalSegment { bytes: framed.len() as u64, ..seg });
        Ok(())
    }

    fn write_record(&mut self, entry: &Entry, time: u64) -> Result<()> {
        let mut payload = vec![TAG_ENTRY];
        payload.extend_from_slice(&time.to_le_bytes());
        entry.encode_into(&mut payload);
        let framed = frame(&payload);
        let seg = self.segments.last_mut().expect("active segment");
        self.store.append(&segment_name(seg.id), &framed)?;
        seg.bytes += framed.len() as u64;
        seg.records += 1;
        seg.min_seq = seg.min_seq.min(entry.seqnum);
        seg.max_seq = seg.max_seq.max(entry.seqnum);
        if self.sync {
            self.store.sync(&segment_name(seg.id))?;
        }
        Ok(())
    }

    pub fn append(&mut self, entry: &Entry, now: u64) -> Result<()> {
        if self.segments.last().is_none_or(|s| s.bytes >= self.segment_bytes) {
            self.start_segment(now)?;
        }
        self.write_record(entry, now)
    }

    /// Deletes segments whose records are all on disk.
    pub fn on_flush(&mut self, flushed_seq: u64) -> Result<usize> {
        let (gone, keep): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.segments).into_iter().partition(|s| s.fully_flushed(flushed_seq));
        for s in &gone {
            self.store.remove(&segment_name(s.id))?;
        }
        self.segments = keep;
        Ok(gone.len())
    }

    /// Copies the unflushed records of every segment older than `max_age`
    /// ticks into a fresh segment and deletes the old ones.
    pub fn purge(&mut self, now: u64, max_age: u64, flushed_seq: u64) -> Result<usize> {
        let expired: Vec<WalSegment> =
            self.segments.iter().filter(|s| now.saturating_sub(s.created) > max_age).cloned().collect();
        if expired.is_empty() {
            return Ok(0);
        }
        let mut carried = Vec::new();
        for s in &expired {
            let data = self.store.read_all(&segment_name(s.id))?;
            for payload in unframe(&data) {
                let mut d = Dec::new(payload);
                if d.u8()? == TAG_ENTRY {
                    let time = d.u64()?;
                    let (e, _) = Entry::decode(d.rest())?;
                    if e.seqnum > flushed_seq {
                        carried.push((e, time));
                    }
                }
            }
        }
        let expired_ids: Vec<u64> = expired.iter().map(|s| s.id).collect();
        self.segments.retain(|s| !expired_ids.contains(&s.id));
        if !carried.is_empty() {
            carried.sort_by_key(|(e, _)| e.seqnum);
            self.start_segment(now)?;
            for (e, t) in &carried {
                self.write_record(e, *t)?;
            }
            self.segments.sort_by_key(|s| s.id);
        }
        for id in expired_ids {
            self.store.remove(&segment_name(id))?;
        }
        Ok(expired.len())
    }

    pub fn segments(&self) -> &[WalSegment] {
        &self.segments
    }
}
