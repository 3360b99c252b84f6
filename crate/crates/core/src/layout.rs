//! Interweaved file layout: tiles ordered on the sort key, pages within a
//! tile ordered on the delete key, entries within a page ordered on the
//! sort key. `h = 1` degenerates to the classic globally sorted layout.

use crate::bloom::PageBloomFilter;
use crate::entry::{Entry, EntryKind};
use crate::error::{Error, Result};
use crate::fences::{DeleteTileMeta, PageSlot, NO_SEQ};
use crate::page::{encode_page, page_capacity, PageImage, DEFAULT_PAGE_SIZE};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutConfig {
    /// Pages per delete tile.
    pub h: usize,
    /// Maximum pages per file.
    pub pages_per_file: usize,
    pub page_size: usize,
    /// Encoded size of a full entry; fixes the per-page entry capacity.
    pub entry_size: usize,
    pub bits_per_entry: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig { h: 1, pages_per_file: 256, page_size: DEFAULT_PAGE_SIZE, entry_size: 1024, bits_per_entry: 10.0 }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.pages_per_file == 0 || !self.pages_per_file.is_multiple_of(self.h) {
            return Err(Error::InvalidParams(format!(
                "h = {} must be at least 1 and divide pages_per_file = {}",
                self.h, self.pages_per_file
            )));
        }
        if self.page_capacity() == 0 {
            return Err(Error::InvalidParams("entry size does not fit in a page".into()));
        }
        Ok(())
    }

    pub fn page_capacity(&self) -> usize {
        page_capacity(self.page_size, self.entry_size)
    }

    pub fn tile_capacity(&self) -> usize {
        self.h * self.page_capacity()
    }

    pub fn file_capacity(&self) -> usize {
        self.pages_per_file * self.page_capacity()
    }
}

/// A file's pages and in-memory metadata before it is written out.
#[derive(Debug, Clone)]
pub struct BuiltFile {
    pub pages: Vec<PageImage>,
    pub tiles: Vec<DeleteTileMeta>,
    pub filters: Vec<PageBloomFilter>,
}

pub(crate) fn page_slot_meta(slot: u32, page: &PageImage) -> PageSlot {
    let mut point_tombstones = 0;
    let mut min_tombstone_seq = NO_SEQ;
    for e in &page.entries {
        if e.kind == EntryKind::PointTombstone {
            point_tombstones += 1;
            min_tombstone_seq = min_tombstone_seq.min(e.seqnum);
        }
    }
    PageSlot {
        slot,
        min_delete_key: page.header.min_delete_key,
        live: true,
        spills: false,
        entry_count: page.entries.len() as u32,
        entry_bytes: page.entries.iter().map(Entry::encoded_len).sum::<usize>() as u32,
        point_tombstones,
        min_tombstone_seq,
    }
}

/// Lays out point entries (strictly increasing sort keys) into tiles and pages.
pub fn build_file(entries: Vec<Entry>, cfg: &LayoutConfig) -> Result<BuiltFile> {
    cfg.validate()?;
    if entries.windows(2).any(|w| w[0].sort_key >= w[1].sort_key) {
        return Err(Error::UnsortedInput);
    }
    if entries.iter().any(|e| e.kind == EntryKind::RangeTombstone) {
        return Err(Error::InvalidParams("range tombstones belong in the range-tombstone block".into()));
    }
    let per_page = cfg.page_capacity();
    let mut pages = Vec::new();
    let mut tiles = Vec::new();
    let mut rest = entries;
    while !rest.is_empty() {
        let tail = rest.split_off(cfg.tile_capacity().min(rest.len()));
        let mut tile_entries = std::mem::replace(&mut rest, tail);
        let min_sort_key = tile_entries[0].sort_key;
        let max_sort_key = tile_entries[tile_entries.len() - 1].sort_key;
        let tile_max_delete_key = tile_entries.iter().map(|e| e.delete_key).max().unwrap();
        tile_entries.sort_by_key(|e| (e.delete_key, e.sort_key));

        let mut slots = Vec::new();
        let mut iter = tile_entries.into_iter().peekable();
        while iter.peek().is_some() {
            let mut chunk: Vec<Entry> = iter.by_ref().take(per_page).collect();
            chunk.sort_by_key(|e| e.sort_key);
            let page = encode_page(chunk, cfg.page_size)?;
            slots.push(page_slot_meta(pages.len() as u32, &page));
            pages.push(page);
        }
        for i in 1..slots.len() {
            let prev_max = pages[slots[i - 1].slot as usize].header.max_delete_key;
            slots[i - 1].spills = prev_max >= slots[i].min_delete_key;
        }
        tiles.push(DeleteTileMeta { min_sort_key, max_sort_key, tile_max_delete_key, pages: slots });
    }
    let bits = cfg.bits_per_entry;
    let filters = par::map(&pages, |p| PageBloomFilter::build(p.entries.iter().map(|e| e.sort_key), bits));
    Ok(BuiltFile { pages, tiles, filters })
}
