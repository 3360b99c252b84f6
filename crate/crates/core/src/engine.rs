//! The storage engine: write path, flushes, the compaction loop and
//! recovery. Reads live in `read`, compaction execution in `executor`, and
//! secondary range deletes in `srd`.

use std::sync::Arc;

use crate::buffer::WriteBuffer;
use crate::clock::{Clock, IngestClock, TimeRing};
use crate::compaction::{merge, split_outputs, OutputChunk};
use crate::config::Config;
use crate::entry::{Entry, EntryKind, RangeTombstone, ENTRY_HEADER_BYTES};
use crate::error::{Error, Result};
use crate::fade::{self, compute_ttls, evaluate_triggers, PlannerConfig, TtlSchedule};
use crate::histogram::Histogram;
use crate::layout::build_file;
use crate::manifest::{FilePlacement, ManifestLog, ManifestRecord, RecordKind, Version};
use crate::metrics::{bump, IoStats};
use crate::par;
use crate::sstable::{file_name, SstFile};
use crate::store::Store;
use crate::wal::Wal;

/// Result of a point delete.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeleteOutcome {
    Inserted,
    /// No filter reported the key, so no tombstone was written.
    SuppressedBlind,
}

/// Upper bound on compactions run back to back before the loop gives up.
const MAX_SETTLE_STEPS: usize = 1 << 20;

#[derive(Debug)]
pub struct Engine {
    pub(crate) cfg: Config,
    pub(crate) store: Arc<dyn Store>,
    pub(crate) clock: Arc<dyn Clock>,
    pub(crate) buffer: WriteBuffer,
    /// Seqnum of the oldest tombstone currently buffered.
    buffer_tomb_anchor: Option<u64>,
    wal: Option<Wal>,
    manifest: ManifestLog,
    pub(crate) version: Arc<Version>,
    pub(crate) ring: TimeRing,
    /// Ring samples below this seqnum are already in the manifest.
    samples_persisted_to: u64,
    ttls: Option<TtlSchedule>,
    next_seq: u64,
    flushed_seq: u64,
    pub(crate) next_file_id: u64,
    pub(crate) stats: Arc<IoStats>,
    /// Earliest tick at which some tombstone expires.
    next_deadline: Option<u64>,
    /// A flush or compaction happened since triggers were last evaluated.
    dirty: bool,
    last_wal_purge: u64,
    closed: bool,
}

impl Engine {
    /// Opens (or creates) a database in `store`, advancing time one tick per
    /// ingested operation.
    pub fn open(store: Arc<dyn Store>, cfg: Config) -> Result<Engine> {
        Self::open_with_clock(store, cfg, Arc::new(IngestClock::default()))
    }

    pub fn open_with_clock(store: Arc<dyn Store>, cfg: Config, clock: Arc<dyn Clock>) -> Result<Engine> {
        cfg.validate()?;
        let manifest = ManifestLog::new(store.clone(), cfg.manifest_sync);
        let st = manifest.replay()?;
        clock.restore(st.now);

        let mut levels: Vec<Vec<Arc<SstFile>>> = Vec::new();
        for p in st.files.values() {
            let mut f = SstFile::open(store.as_ref(), p.file_id)?;
            f.meta.level = p.level;
            f.meta.level_arrival_time = p.arrival;
            let l = p.level as usize;
            if levels.len() < l {
                levels.resize_with(l, Vec::new);
            }
            levels[l - 1].push(Arc::new(f));
        }
        for name in store.list()? {
            let orphan = name
                .strip_suffix(".sst")
                .and_then(|id| id.parse::<u64>().ok())
                .is_some_and(|id| !st.files.contains_key(&id));
            if orphan {
                store.remove(&name)?;
            }
        }
        let mut version = Version { number: st.version, levels };
        version.normalize();

        let mut ring = TimeRing::default();
        ring.extend(&st.time_samples);
        let mut engine = Engine {
            buffer: WriteBuffer::new(cfg.buffer_bytes),
            buffer_tomb_anchor: None,
            wal: None,
            manifest,
            version: Arc::new(version),
            ring,
            samples_persisted_to: st.next_seqnum,
            ttls: None,
            next_seq: st.next_seqnum.max(1),
            flushed_seq: st.flushed_seqnum,
            next_file_id: st.next_file_id.max(1),
            stats: Arc::new(IoStats::default()),
            next_deadline: None,
            dirty: true,
            last_wal_purge: clock.now(),
            closed: false,
            cfg,
            store,
            clock,
        };
        engine.reassign_invalidation_estimates();
        engine.recompute_ttls();

        if engine.cfg.wal.enabled {
            let (wal, records) = Wal::open(engine.store.clone(), engine.cfg.wal.segment_bytes, engine.cfg.wal.sync)?;
            let flushed = engine.flushed_seq;
            for (e, t) in records.into_iter().filter(|(e, _)| e.seqnum > flushed) {
                engine.next_seq = engine.next_seq.max(e.seqnum + 1);
                engine.ring.record(e.seqnum, t);
                engine.clock.restore(t);
                engine.apply_to_buffer(e);
            }
            engine.wal = Some(wal);
        }
        Ok(engine)
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn store(&self) -> &Arc<dyn Store> {
        &self.store
    }

    /// The current immutable version; holding it pins its files.
    pub fn version(&self) -> Arc<Version> {
        self.version.clone()
    }

    pub fn stats(&self) -> &Arc<IoStats> {
        &self.stats
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn buffer(&self) -> &WriteBuffer {
        &self.buffer
    }

    pub fn ttls(&self) -> Option<&TtlSchedule> {
        self.ttls.as_ref()
    }

    pub fn time_ring(&self) -> &TimeRing {
        &self.ring
    }

    pub fn flushed_seqnum(&self) -> u64 {
        self.flushed_seq
    }

    pub fn next_seqnum(&self) -> u64 {
        self.next_seq
    }

    pub fn wal(&self) -> Option<&Wal> {
        self.wal.as_ref()
    }

    /// Logical seconds since the entry with `seqnum` was written.
    pub fn age_of(&self, seqnum: u64) -> f64 {
        self.now().saturating_sub(self.ring.time_of(seqnum)) as f64 / self.cfg.ingest_rate as f64
    }

    fn check_open(&self) -> Result<()> {
        if self.closed {
            Err(Error::Closed)
        } else {
            Ok(())
        }
    }

    fn check_size(&self, value_len: usize) -> Result<()> {
        let max = self.cfg.layout.entry_size.saturating_sub(ENTRY_HEADER_BYTES);
        if value_len > max {
            return Err(Error::ValueTooLarge { len: value_len, max });
        }
        Ok(())
    }

    fn next_seqnum_at_now(&mut self) -> (u64, u64) {
        self.clock.on_ingest();
        let now = self.clock.now();
        let seq = self.next_seq;
        self.next_seq += 1;
        self.ring.record(seq, now);
        (seq, now)
    }

    fn log(&mut self, e: &Entry, now: u64) -> Result<()> {
        if let Some(w) = self.wal.as_mut() {
            w.append(e, now)?;
        }
        Ok(())
    }

    fn apply_to_buffer(&mut self, e: Entry) {
        match e.kind {
            EntryKind::RangeTombstone => {
                if let Some(rt) = RangeTombstone::from_entry(&e) {
                    self.note_buffered_tombstone(rt.seqnum);
                    self.buffer.add_range_tombstone(rt);
                }
            }
            EntryKind::PointTombstone => {
                self.note_buffered_tombstone(e.seqnum);
                self.buffer.upsert(e);
            }
            EntryKind::Put => self.buffer.upsert(e),
        }
    }

    fn note_buffered_tombstone(&mut self, seq: u64) {
        self.buffer_tomb_anchor = Some(self.buffer_tomb_anchor.map_or(seq, |a| a.min(seq)));
    }

    pub fn put(&mut self, sort_key: u64, delete_key: u64, value: Vec<u8>) -> Result<()> {
        self.check_open()?;
        self.check_size(value.len())?;
        let (seq, now) = self.next_seqnum_at_now();
        let e = Entry::put(sort_key, delete_key, seq, value);
        self.log(&e, now)?;
        self.buffer.upsert(e);
        self.after_write()
    }

    /// Point delete whose tombstone carries the current tick as delete key.
    pub fn delete(&mut self, sort_key: u64) -> Result<DeleteOutcome> {
        let dk = self.clock.now() + 1;
        self.delete_with_key(sort_key, dk)
    }

    /// Point delete with an explicit delete key for the tombstone.
    pub fn delete_with_key(&mut self, sort_key: u64, delete_key: u64) -> Result<DeleteOutcome> {
        self.check_open()?;
        let in_buffer = self.buffer.get(sort_key).is_some();
        if self.cfg.blind_delete_suppression && !in_buffer && !self.may_exist_on_disk(sort_key) {
            self.clock.on_ingest();
            bump(&self.stats.blind_deletes_suppressed, 1);
            self.after_write()?;
            return Ok(DeleteOutcome::SuppressedBlind);
        }
        let (seq, now) = self.next_seqnum_at_now();
        let e = Entry::tombstone(sort_key, delete_key, seq);
        self.log(&e, now)?;
        bump(&self.stats.tombstones_inserted, 1);
        self.apply_to_buffer(e);
        self.after_write()?;
        Ok(DeleteOutcome::Inserted)
    }

    /// Deletes every older entry with sort key in `[lo, hi)`.
    pub fn range_delete(&mut self, lo: u64, hi: u64) -> Result<()> {
        self.check_open()?;
        if lo >= hi {
            return Err(Error::InvalidRange { lo, hi });
        }
        let (seq, now) = self.next_seqnum_at_now();
        let rt = RangeTombstone { lo, hi, seqnum: seq, delete_key: now };
        self.log(&rt.to_entry(), now)?;
        bump(&self.stats.range_tombstones_inserted, 1);
        self.apply_to_buffer(rt.to_entry());
        self.after_write()
    }

    fn after_write(&mut self) -> Result<()> {
        if self.buffer.is_full() || self.buffered_tombstone_expired() {
            self.flush()?;
        }
        let now = self.clock.now();
        let interval = (self.cfg.wal.purge_interval_s * self.cfg.ingest_rate as f64) as u64;
        if self.wal.is_some() && interval > 0 && now.saturating_sub(self.last_wal_purge) >= interval {
            self.purge_wal(now)?;
        }
        self.settle().map(|_| ())
    }

    /// A buffered tombstone has spent Level 1's whole budget in memory.
    fn buffered_tombstone_expired(&self) -> bool {
        if !self.cfg.fade.enabled {
            return false;
        }
        let Some(anchor) = self.buffer_tomb_anchor else { return false };
        let budget = self.ttls.as_ref().map_or(self.cfg.fade.d_th_s, |t| t.ttl(1));
        let deadline = self.ring.time_of(anchor) + (budget * self.cfg.ingest_rate as f64) as u64;
        self.clock.now() > deadline
    }

    /// Copies unflushed records out of WAL segments older than the
    /// threshold and deletes those segments.
    pub fn purge_wal(&mut self, now: u64) -> Result<usize> {
        self.last_wal_purge = now;
        let max_age = self.cfg.d_th_ticks();
        let flushed = self.flushed_seq;
        let Some(w) = self.wal.as_mut() else { return Ok(0) };
        let n = w.purge(now, max_age, flushed)?;
        bump(&self.stats.wal_purges, n as u64);
        Ok(n)
    }

    /// Writes the buffer to Level 1. Returns the new file ids.
    pub fn flush(&mut self) -> Result<Vec<u64>> {
        self.check_open()?;
        if self.buffer.is_empty() {
            return Ok(Vec::new());
        }
        let (entries, rts) = self.buffer.drain();
        self.buffer_tomb_anchor = None;
        let chunks = split_outputs(merge(vec![entries], rts, false), self.cfg.layout.file_capacity());
        let now = self.clock.now();
        let files = self.write_outputs(chunks, 1, now)?;
        let bytes: u64 = files.iter().map(|f| f.meta.entry_bytes).sum();
        bump(&self.stats.bytes_flushed, bytes);
        bump(&self.stats.flushes, 1);
        let ids = files.iter().map(|f| f.meta.file_id).collect();
        self.flushed_seq = self.next_seq - 1;
        self.install(RecordKind::Flush, &[], files)?;
        let flushed = self.flushed_seq;
        if let Some(w) = self.wal.as_mut() {
            w.on_flush(flushed)?;
        }
        Ok(ids)
    }

    /// Builds and writes one file per chunk at `level`.
    pub(crate) fn write_outputs(&mut self, chunks: Vec<OutputChunk>, level: u32, now: u64) -> Result<Vec<SstFile>> {
        let jobs: Vec<(u64, OutputChunk)> = chunks
            .into_iter()
            .map(|c| {
                let id = self.next_file_id;
                self.next_file_id += 1;
                (id, c)
            })
            .collect();
        let layout = self.cfg.layout;
        let key_space = self.cfg.key_space;
        let store = self.store.as_ref();
        let built = par::into_map_with(self.cfg.exec, jobs, |(id, chunk)| -> Result<SstFile> {
            let mut hist = Histogram::new(key_space);
            for e in &chunk.entries {
                hist.add_key(e.sort_key);
            }
            let file = build_file(chunk.entries, &layout)?;
            SstFile::create(store, id, file, chunk.range_tombstones, hist.counts, layout.page_size)
        });
        let mut out = Vec::with_capacity(built.len());
        for f in built {
            let mut f = f?;
            f.meta.level = level;
            f.meta.level_arrival_time = now;
            bump(&self.stats.pages_written, f.num_slots as u64);
            out.push(f);
        }
        Ok(out)
    }

    /// Publishes a new version: drops `removed`, adds `added` (which may
    /// reuse ids of removed files), and logs the change.
    pub(crate) fn install(&mut self, kind: RecordKind, removed: &[u64], added: Vec<SstFile>) -> Result<()> {
        let mut levels = self.version.levels.clone();
        for l in levels.iter_mut() {
            l.retain(|f| !removed.contains(&f.meta.file_id));
        }
        let placements: Vec<FilePlacement> = added
            .iter()
            .map(|f| FilePlacement { file_id: f.meta.file_id, level: f.meta.level, arrival: f.meta.level_arrival_time })
            .collect();
        for f in added {
            let l = f.meta.level as usize;
            if levels.len() < l {
                levels.resize_with(l, Vec::new);
            }
            levels[l - 1].push(Arc::new(f));
        }
        let mut v = Version { number: self.version.number + 1, levels };
        v.normalize();
        if self.cfg.paranoid {
            v.check_disjoint().map_err(Error::Corrupt)?;
        }
        self.version = Arc::new(v);
        let fresh: Vec<u64> = placements.iter().map(|p| p.file_id).collect();
        self.assign_invalidation_estimates(&fresh);
        self.recompute_ttls();
        self.prune_ring();

        let record = ManifestRecord {
            kind,
            version: self.version.number,
            now: self.clock.now(),
            next_seqnum: self.next_seq,
            flushed_seqnum: self.flushed_seq,
            next_file_id: self.next_file_id,
            removed: removed.to_vec(),
            added: placements,
            ttls: self.ttls.as_ref().map(|t| t.d.clone()).unwrap_or_default(),
            time_samples: self.ring.samples_since(self.samples_persisted_to).to_vec(),
        };
        self.manifest.append(&record)?;
        self.samples_persisted_to = self.next_seq;
        self.dirty = true;
        Ok(())
    }

    fn reassign_invalidation_estimates(&mut self) {
        let all: Vec<u64> = self.version.files().map(|f| f.meta.file_id).collect();
        self.assign_invalidation_estimates(&all);
    }

    /// `b_f = p_f + estimated entries covered by the file's range
    /// tombstones`, against the histogram of the rest of the tree.
    fn assign_invalidation_estimates(&mut self, ids: &[u64]) {
        let needs = |f: &SstFile| ids.contains(&f.meta.file_id);
        let with_ranges = self.version.files().any(|f| needs(f) && !f.range_tombstones.is_empty());
        let total = with_ranges.then(|| self.version.histogram(self.cfg.key_space, None));
        let mut v = (*self.version).clone();
        let mut changed = false;
        for level in v.levels.iter_mut() {
            for f in level.iter_mut().filter(|f| needs(f)) {
                let rd = match &total {
                    Some(total) if !f.range_tombstones.is_empty() => {
                        let mut rest = total.clone();
                        for (c, own) in rest.counts.iter_mut().zip(&f.histogram) {
                            *c -= own;
                        }
                        fade::estimate_range_invalidations(f, &rest)
                    }
                    _ => 0.0,
                };
                let b = f.meta.num_point_tombstones as f64 + rd;
                if f.meta.b_f != b {
                    Arc::make_mut(f).meta.b_f = b;
                    changed = true;
                }
            }
        }
        if changed {
            self.version = Arc::new(v);
        }
    }

    fn recompute_ttls(&mut self) {
        let deepest = self.version.deepest_level();
        self.ttls = if deepest == 0 {
            None
        } else {
            compute_ttls(self.cfg.fade.d_th_s, self.cfg.size_ratio as f64, fade::ttl_levels(deepest)).ok()
        };
        let mut changed = false;
        let mut v = (*self.version).clone();
        for (i, level) in v.levels.iter_mut().enumerate() {
            let ttl = self.ttls.as_ref().map_or(0.0, |t| t.ttl(i + 1));
            for f in level.iter_mut() {
                if f.meta.ttl != ttl {
                    Arc::make_mut(f).meta.ttl = ttl;
                    changed = true;
                }
            }
        }
        if changed {
            self.version = Arc::new(v);
        }
    }

    /// Forgets time samples no live tombstone can refer to.
    fn prune_ring(&mut self) {
        let oldest = self
            .version
            .files()
            .filter_map(|f| f.meta.age_anchor_seqnum)
            .chain(self.buffer_tomb_anchor)
            .min()
            .unwrap_or(self.next_seq);
        self.ring.prune_before(oldest.min(self.samples_persisted_to));
    }

    fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            buffer_bytes: self.cfg.buffer_bytes as u64,
            size_ratio: self.cfg.size_ratio,
            fade_enabled: self.cfg.fade.enabled,
            saturation_mode: self.cfg.fade.selection,
            ingest_rate: self.cfg.ingest_rate,
        }
    }

    /// Runs compactions until no trigger fires.
    pub fn settle(&mut self) -> Result<usize> {
        let now = self.clock.now();
        let due = self.next_deadline.is_some_and(|d| now > d);
        if !self.dirty && !due {
            return Ok(0);
        }
        let planner = self.planner();
        let mut steps = 0;
        while let Some(plan) = evaluate_triggers(&self.version, now, self.ttls.as_ref(), &self.ring, &planner) {
            self.execute_compaction(&plan)?;
            steps += 1;
            if steps > MAX_SETTLE_STEPS {
                return Err(Error::corrupt("compaction loop did not converge"));
            }
        }
        self.dirty = false;
        self.next_deadline = self.compute_next_deadline();
        Ok(steps)
    }

    fn compute_next_deadline(&self) -> Option<u64> {
        if !self.cfg.fade.enabled {
            return None;
        }
        let ttls = self.ttls.as_ref()?;
        self.version
            .levels
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |f| (i + 1, f)))
            .filter_map(|(level, f)| fade::expiry_tick(f, level, ttls, &self.ring, self.cfg.ingest_rate))
            .min()
    }

    /// Flushes the buffer, settles compactions and rejects further writes.
    pub fn close(&mut self) -> Result<()> {
        if self.closed {
            return Ok(());
        }
        self.flush()?;
        self.settle()?;
        self.closed = true;
        Ok(())
    }

    /// Removes files that left the tree.
    pub(crate) fn remove_files(&self, ids: &[u64]) -> Result<()> {
        for id in ids {
            let name = file_name(*id);
            if self.store.exists(&name) {
                self.store.remove(&name)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::store::MemStore;

    pub(crate) fn small_config() -> Config {
        let mut c = Config::classic();
        c.layout.entry_size = 64;
        c.layout.pages_per_file = 8;
        c.buffer_bytes = 2048;
        c.size_ratio = 3;
        c.key_space = 1 << 16;
        c.paranoid = true;
        c
    }

    fn open(cfg: Config) -> (MemStore, Engine) {
        let store = MemStore::new();
        let e = Engine::open(Arc::new(store.clone()), cfg).unwrap();
        (store, e)
    }

    #[test]
    fn oversize_buffer_triggers_exactly_one_flush() {
        let (_, mut e) = open(small_config());
        let per = Entry::put(0, 0, 0, vec![0; 20]).encoded_len();
        let n = 2048 / per + 1;
        for k in 0..n as u64 {
            e.put(k, 0, vec![0; 20]).unwrap();
        }
        assert_eq!(e.stats.snapshot().flushes, 1);
    }

    #[test]
    fn put_after_close_fails() {
        let (_, mut e) = open(small_config());
        e.put(1, 1, vec![]).unwrap();
        e.close().unwrap();
        assert!(matches!(e.put(2, 2, vec![]), Err(Error::Closed)));
    }

    #[test]
    fn value_too_large() {
        let (_, mut e) = open(small_config());
        assert!(matches!(e.put(1, 1, vec![0; 64]), Err(Error::ValueTooLarge { .. })));
    }

    #[test]
    fn flush_records_tombstone_age() {
        let clock = ManualClock::new(0);
        let store = MemStore::new();
        let mut cfg = small_config();
        cfg.ingest_rate = 1;
        let mut e = Engine::open_with_clock(Arc::new(store), cfg, Arc::new(clock.clone())).unwrap();
        clock.set(10);
        e.put(1, 0, vec![]).unwrap();
        e.delete(2).unwrap();
        clock.set(20);
        e.delete(3).unwrap();
        assert!(e.flush().unwrap().len() == 1);
        clock.set(50);
        let v = e.version();
        let f = &v.level(1)[0];
        assert_eq!(f.meta.num_point_tombstones, 2);
        let hist = v.histogram(e.cfg.key_space, Some(f.meta.file_id));
        let m = fade::update_file_meta(f, &hist, &e.ring, e.now(), 1);
        assert_eq!(m.p_f, 2);
        assert_eq!(m.a_f, 40.0);

        e.put(7, 0, vec![]).unwrap();
        e.flush().unwrap();
        let v = e.version();
        let f = v.level(1).iter().find(|f| f.meta.num_point_tombstones == 0).unwrap();
        assert_eq!(f.meta.age_anchor_seqnum, None);
        let m = fade::update_file_meta(f, &hist, &e.ring, e.now(), 1);
        assert_eq!(m.a_f, 0.0);
    }

    #[test]
    fn empty_flush_is_noop() {
        let (_, mut e) = open(small_config());
        assert!(e.flush().unwrap().is_empty());
        assert_eq!(e.version().number, 0);
    }

    #[test]
    fn blind_delete_suppressed() {
        let (_, mut e) = open(Config { blind_delete_suppression: true, ..small_config() });
        assert_eq!(e.delete(5).unwrap(), DeleteOutcome::SuppressedBlind);
        assert!(e.buffer.is_empty());
        e.put(5, 0, vec![]).unwrap();
        e.flush().unwrap();
        assert_eq!(e.delete(5).unwrap(), DeleteOutcome::Inserted);
        assert_eq!(e.delete(5).unwrap(), DeleteOutcome::Inserted);
        assert_eq!(e.buffer.len(), 1);
        assert_eq!(e.stats.snapshot().blind_deletes_suppressed, 1);
    }
}
