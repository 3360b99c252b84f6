//! Point lookups, primary range scans and secondary range lookups.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::bloom::{key_digest, Probe};
use crate::engine::Engine;
use crate::entry::{Entry, RangeTombstone};
use crate::error::{Error, Result};
use crate::metrics::bump;
use crate::sstable::SstFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Outcome {
    Found,
    /// A tombstone or newer range tombstone hides the key.
    Deleted,
    #[default]
    NotFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LookupStats {
    pub filter_probes: u64,
    pub hash_computations: u64,
    pub pages_read: u64,
    pub levels_touched: u64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lookup {
    pub value: Option<Vec<u8>>,
    pub stats: LookupStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SecondaryLookup {
    /// Visible entries with delete key in range, by sort key.
    pub entries: Vec<Entry>,
    /// Pages read while collecting candidates.
    pub pages_read: u64,
    /// Pages read while checking candidates are the newest version.
    pub verify_pages_read: u64,
}

impl Engine {
    pub fn get(&self, key: u64) -> Result<Option<Vec<u8>>> {
        Ok(self.lookup(key)?.value)
    }

    /// Point lookup with per-query statistics.
    pub fn lookup(&self, key: u64) -> Result<Lookup> {
        let mut stats = LookupStats::default();
        let found = self.resolve(key, &mut stats)?;
        let s = &self.stats;
        bump(&s.point_lookups, 1);
        bump(&s.lookup_pages_read, stats.pages_read);
        bump(&s.pages_read, stats.pages_read);
        bump(&s.filter_probes, stats.filter_probes);
        bump(&s.hash_computations, stats.hash_computations);
        Ok(Lookup { value: found.map(|e| e.value), stats })
    }

    /// The visible version of `key`, if it is live.
    fn resolve(&self, key: u64, st: &mut LookupStats) -> Result<Option<Entry>> {
        let mut shadow = self.buffer.max_covering_rt(key);
        if let Some(e) = self.buffer.get(key) {
            return Ok(self.finish(e.clone(), shadow, st));
        }
        for level in &self.version.levels {
            let mut touched = false;
            for f in level.iter().filter(|f| f.meta.overlaps(key, key)) {
                touched = true;
                shadow = shadow.max(f.max_covering_rt(key));
                if shadow.is_some_and(|s| s > f.meta.max_seqnum) {
                    continue;
                }
                if let Some(e) = find_in_file(self, f, key, st)? {
                    st.levels_touched += 1;
                    return Ok(self.finish(e, shadow, st));
                }
            }
            st.levels_touched += touched as u64;
        }
        st.outcome = if shadow.is_some() { Outcome::Deleted } else { Outcome::NotFound };
        Ok(None)
    }

    fn finish(&self, e: Entry, shadow: Option<u64>, st: &mut LookupStats) -> Option<Entry> {
        if e.is_tombstone() || shadow.is_some_and(|s| s > e.seqnum) {
            st.outcome = Outcome::Deleted;
            None
        } else {
            st.outcome = Outcome::Found;
            Some(e)
        }
    }

    /// Whether any filter on disk reports `key`. No pages are read.
    pub(crate) fn may_exist_on_disk(&self, key: u64) -> bool {
        let digest = key_digest(key);
        let (mut probes, mut hashes) = (0, 0);
        let mut hit = false;
        'outer: for f in self.version.files().filter(|f| f.meta.overlaps(key, key)) {
            let Some(t) = f.fences.locate_tile(key) else { continue };
            let tile = &f.tiles[t];
            if key > tile.max_sort_key {
                continue;
            }
            for (_, p) in tile.live_pages() {
                probes += 1;
                let (probe, n) = f.filters[p.slot as usize].query_digest(digest);
                hashes += n as u64;
                if probe == Probe::MaybePresent {
                    hit = true;
                    break 'outer;
                }
            }
        }
        bump(&self.stats.filter_probes, probes);
        bump(&self.stats.hash_computations, hashes);
        hit
    }

    /// Live `(key, value)` pairs with key in `[lo, hi)`, ascending.
    pub fn range_scan(&self, lo: u64, hi: u64) -> Result<Vec<(u64, Vec<u8>)>> {
        if lo >= hi {
            return Err(Error::InvalidRange { lo, hi });
        }
        let mut runs: Vec<Vec<Entry>> = vec![self.buffer.range(lo, hi).cloned().collect()];
        let mut rts: Vec<RangeTombstone> =
            self.buffer.range_tombstones().iter().filter(|r| r.lo < hi && lo < r.hi).copied().collect();
        let mut pages = 0;
        for f in self.version.files().filter(|f| f.meta.overlaps(lo, hi - 1)) {
            rts.extend(f.range_tombstones.iter().filter(|r| r.lo < hi && lo < r.hi));
            let mut run = Vec::new();
            for t in f.tiles.iter().filter(|t| t.min_sort_key < hi && lo <= t.max_sort_key) {
                for (_, p) in t.live_pages() {
                    pages += 1;
                    let page = f.read_page(self.store.as_ref(), p.slot)?;
                    run.extend(page.entries.into_iter().filter(|e| e.sort_key >= lo && e.sort_key < hi));
                }
            }
            run.sort_unstable_by_key(|e| e.sort_key);
            runs.push(run);
        }
        bump(&self.stats.range_scans, 1);
        bump(&self.stats.pages_read, pages);

        let mut out = Vec::new();
        for e in merge_newest(runs) {
            let shadowed = rts.iter().any(|r| r.covers(e.sort_key) && r.seqnum > e.seqnum);
            if !shadowed && !e.is_tombstone() {
                out.push((e.sort_key, e.value));
            }
        }
        Ok(out)
    }

    /// Live entries whose delete key lies in `[d_lo, d_hi)`.
    pub fn secondary_range_lookup(&self, d_lo: u64, d_hi: u64) -> Result<SecondaryLookup> {
        if d_lo >= d_hi {
            return Err(Error::InvalidRange { lo: d_lo, hi: d_hi });
        }
        let in_range = |e: &Entry| !e.is_tombstone() && e.delete_key >= d_lo && e.delete_key < d_hi;
        let mut candidates: Vec<Entry> = self.buffer.entries().filter(|e| in_range(e)).cloned().collect();
        let mut pages = 0;
        let (lo, hi) = (d_lo as u128, d_hi as u128);
        for f in self.version.files() {
            for t in &f.tiles {
                for (i, p) in t.live_pages() {
                    let (s, e) = t.page_span(i);
                    if s < hi && e > lo {
                        pages += 1;
                        let page = f.read_page(self.store.as_ref(), p.slot)?;
                        candidates.extend(page.entries.into_iter().filter(|e| in_range(e)));
                    }
                }
            }
        }
        candidates.sort_unstable_by(|a, b| a.sort_key.cmp(&b.sort_key).then(b.seqnum.cmp(&a.seqnum)));
        candidates.dedup_by_key(|e| e.sort_key);

        let mut verify = LookupStats::default();
        let mut entries = Vec::with_capacity(candidates.len());
        for c in candidates {
            if self.resolve(c.sort_key, &mut verify)?.is_some_and(|v| v.seqnum == c.seqnum) {
                entries.push(c);
            }
        }
        bump(&self.stats.pages_read, pages + verify.pages_read);
        Ok(SecondaryLookup { entries, pages_read: pages, verify_pages_read: verify.pages_read })
    }
}

fn find_in_file(engine: &Engine, f: &SstFile, key: u64, st: &mut LookupStats) -> Result<Option<Entry>> {
    let Some(t) = f.fences.locate_tile(key) else { return Ok(None) };
    let tile = &f.tiles[t];
    if key > tile.max_sort_key {
        return Ok(None);
    }
    let digest = key_digest(key);
    for (_, p) in tile.live_pages() {
        st.filter_probes += 1;
        let (probe, n) = f.filters[p.slot as usize].query_digest(digest);
        st.hash_computations += n as u64;
        if probe == Probe::MaybePresent {
            st.pages_read += 1;
            let page = f.read_page(engine.store.as_ref(), p.slot)?;
            if let Some(e) = page.find(key) {
                return Ok(Some(e.clone()));
            }
        }
    }
    Ok(None)
}

/// K-way merge of key-sorted runs keeping the highest seqnum per key.
pub fn merge_newest(runs: Vec<Vec<Entry>>) -> Vec<Entry> {
    let mut iters: Vec<std::vec::IntoIter<Entry>> = runs.into_iter().map(Vec::into_iter).collect();
    let mut heap = BinaryHeap::new();
    let mut heads: Vec<Option<Entry>> = Vec::with_capacity(iters.len());
    for (i, it) in iters.iter_mut().enumerate() {
        let head = it.next();
        if let Some(e) = &head {
            heap.push((Reverse(e.sort_key), e.seqnum, i));
        }
        heads.push(head);
    }
    let mut out: Vec<Entry> = Vec::new();
    while let Some((Reverse(key), _, i)) = heap.pop() {
        let e = heads[i].take().expect("queued head");
        if out.last().is_none_or(|l| l.sort_key != key) {
            out.push(e);
        }
        if let Some(n) = iters[i].next() {
            heap.push((Reverse(n.sort_key), n.seqnum, i));
            heads[i] = Some(n);
        }
    }
    out
}
