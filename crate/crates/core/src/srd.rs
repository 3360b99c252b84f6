//! Secondary range deletes: full page drops from delete-key fences, and
//! in-place edits of the boundary pages.

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::fences::{boundary_pages, full_drop_candidates};
use crate::layout::page_slot_meta;
use crate::manifest::RecordKind;
use crate::metrics::bump;
use crate::page::encode_page;
use crate::par;
use crate::sstable::SstFile;
use crate::store::Store;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SrdStats {
    /// Pages unlinked from fences alone, without reading them.
    pub full_drops: u64,
    /// Boundary pages rewritten (including those that ended up empty).
    pub partial_edits: u64,
    /// Boundary pages whose every entry matched and that were dropped.
    pub emptied: u64,
    pub pages_read: u64,
    /// Entries removed.
    pub entries_removed: u64,
}

impl SrdStats {
    fn add(&mut self, o: &SrdStats) {
        self.full_drops += o.full_drops;
        self.partial_edits += o.partial_edits;
        self.emptied += o.emptied;
        self.pages_read += o.pages_read;
        self.entries_removed += o.entries_removed;
    }
}

/// Applies the delete to one file. Returns the updated file when anything
/// changed.
fn delete_in_file(
    store: &dyn Store,
    file: &SstFile,
    d_lo: u64,
    d_hi: u64,
    shadow_check: bool,
) -> Result<(Option<SstFile>, SrdStats)> {
    let mut st = SrdStats::default();
    let mut f = file.clone();
    let in_range = |dk: u64| dk >= d_lo && dk < d_hi;
    for t in 0..f.tiles.len() {
        let full = full_drop_candidates(&f.tiles[t], d_lo, d_hi)?;
        let boundary = boundary_pages(&f.tiles[t], d_lo, d_hi);
        for i in full {
            let slot = f.tiles[t].pages[i].slot;
            if shadow_check {
                let page = f.read_page(store, slot)?;
                if let Some(e) = page.entries.iter().find(|e| !in_range(e.delete_key)) {
                    return Err(Error::corrupt(format!(
                        "file {} slot {slot}: full drop would lose key {} with delete key {}",
                        f.meta.file_id, e.sort_key, e.delete_key
                    )));
                }
            }
            st.entries_removed += f.tiles[t].pages[i].entry_count as u64;
            f.tiles[t].pages[i].live = false;
            f.zero_page(store, slot)?;
            st.full_drops += 1;
        }
        for i in boundary {
            let slot = f.tiles[t].pages[i].slot;
            let mut page = f.read_page(store, slot)?;
            st.pages_read += 1;
            let before = page.entries.len();
            page.entries.retain(|e| !in_range(e.delete_key));
            let removed = before - page.entries.len();
            if removed == 0 {
                continue;
            }
            st.entries_removed += removed as u64;
            st.partial_edits += 1;
            if page.entries.is_empty() {
                f.tiles[t].pages[i].live = false;
                f.zero_page(store, slot)?;
                st.emptied += 1;
                continue;
            }
            let page = encode_page(page.entries, f.page_size)?;
            let old = &f.tiles[t].pages[i];
            let mut meta = page_slot_meta(slot, &page);
            meta.spills = old.spills;
            f.tiles[t].pages[i] = meta;
            f.filters[slot as usize].rebuild(page.entries.iter().map(|e| e.sort_key));
            f.write_page(store, slot, &page)?;
        }
    }
    if st.full_drops + st.partial_edits == 0 {
        return Ok((None, st));
    }
    f.refresh_meta(&[]);
    Ok((Some(f), st))
}

impl Engine {
    /// Removes every entry whose delete key lies in `[d_lo, d_hi)`.
    pub fn secondary_range_delete(&mut self, d_lo: u64, d_hi: u64) -> Result<SrdStats> {
        if d_lo >= d_hi {
            return Err(Error::InvalidRange { lo: d_lo, hi: d_hi });
        }
        self.flush()?;
        let files: Vec<_> = self.version.files().cloned().collect();
        let store = self.store.clone();
        let paranoid = self.cfg.paranoid;
        let results = par::map_with(self.cfg.exec, &files, |f| delete_in_file(store.as_ref(), f, d_lo, d_hi, paranoid));

        let mut total = SrdStats::default();
        let mut changed = Vec::new();
        let mut emptied_files = Vec::new();
        for r in results {
            let (file, st) = r?;
            total.add(&st);
            if let Some(f) = file {
                if f.is_empty() {
                    emptied_files.push(f.meta.file_id);
                } else {
                    f.persist_metadata(self.store.as_ref())?;
                    changed.push(f);
                }
            }
        }
        if !changed.is_empty() || !emptied_files.is_empty() {
            let mut removed: Vec<u64> = changed.iter().map(|f| f.meta.file_id).collect();
            removed.extend(&emptied_files);
            self.install(RecordKind::PageDrop, &removed, changed)?;
            self.remove_files(&emptied_files)?;
        }
        let s = &self.stats;
        bump(&s.full_drops, total.full_drops);
        bump(&s.partial_edits, total.partial_edits);
        bump(&s.emptied_pages, total.emptied);
        bump(&s.srd_pages_read, total.pages_read);
        bump(&s.pages_read, total.pages_read);
        bump(&s.pages_written, total.partial_edits - total.emptied);
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::store::MemStore;
    use std::sync::Arc;

    fn engine(h: usize) -> Engine {
        let mut c = Config::classic();
        c.layout.h = h;
        c.layout.entry_size = 64;
        c.layout.pages_per_file = 16;
        c.buffer_bytes = 1 << 20;
        c.key_space = 1 << 16;
        c.paranoid = true;
        Engine::open(Arc::new(MemStore::new()), c).unwrap()
    }

    fn load(e: &mut Engine, n: u64) {
        // delete keys are a fixed permutation of the sort keys
        for k in 0..n {
            e.put(k, (k * 37) % n, vec![0; 8]).unwrap();
        }
        e.flush().unwrap();
    }

    #[test]
    fn whole_domain_drops_everything_without_reads() {
        let mut e = engine(4);
        load(&mut e, 200);
        let st = e.secondary_range_delete(0, u64::MAX).unwrap();
        assert_eq!(st.pages_read, 0);
        assert_eq!(st.partial_edits, 0);
        assert!(st.full_drops > 0);
        assert!(e.range_scan(0, u64::MAX).unwrap().is_empty());
        assert_eq!(e.version().file_count(), 0);
    }

    #[test]
    fn range_without_matches_reads_only() {
        let mut e = engine(4);
        load(&mut e, 200);
        let v = e.version().number;
        let st = e.secondary_range_delete(5000, 6000).unwrap();
        assert_eq!(st.full_drops + st.partial_edits, 0);
        assert_eq!(e.version().number, v);
        assert_eq!(e.range_scan(0, u64::MAX).unwrap().len(), 200);
    }

    #[test]
    fn removes_exactly_the_range() {
        let mut e = engine(4);
        load(&mut e, 300);
        let st = e.secondary_range_delete(50, 120).unwrap();
        assert_eq!(st.entries_removed, 70);
        for k in 0..300u64 {
            let dk = (k * 37) % 300;
            assert_eq!(e.get(k).unwrap().is_some(), !(50..120).contains(&dk), "key {k}");
        }
        assert!(e.secondary_range_lookup(50, 120).unwrap().entries.is_empty());
        assert_eq!(e.secondary_range_lookup(0, u64::MAX).unwrap().entries.len(), 230);
    }

    #[test]
    fn survives_reopen() {
        let store = MemStore::new();
        let mut c = Config::classic();
        c.layout.h = 4;
        c.layout.entry_size = 64;
        c.layout.pages_per_file = 16;
        c.key_space = 1 << 16;
        let mut e = Engine::open(Arc::new(store.clone()), c.clone()).unwrap();
        load(&mut e, 300);
        e.secondary_range_delete(0, 150).unwrap();
        let before = e.range_scan(0, u64::MAX).unwrap();
        e.close().unwrap();
        let e = Engine::open(Arc::new(store), c).unwrap();
        assert_eq!(e.range_scan(0, u64::MAX).unwrap(), before);
        assert_eq!(before.len(), 150);
    }
}
