//! Immutable sorted files in the interweaved layout.
//!
//! ```text
//! [page slot 0] ... [page slot n-1]          n * page_size bytes
//! [metadata region]
//!     range-tombstone block
//!     per-slot Bloom filters
//!     delete tile metadata (sort + delete fences, live bitmap)
//!     file metadata
//!     key histogram
//! [trailer] meta_offset u64, meta_len u64, meta_crc u32, format u32, magic u64
//! ```
//!
//! The metadata region is rewritten in place after page drops.

use std::sync::Arc;

use crate::bloom::PageBloomFilter;
use crate::codec::{Dec, Enc};
use crate::entry::{Entry, RangeTombstone};
use crate::error::{Error, Result};
use crate::fences::{DeleteTileMeta, PageSlot, SortKeyFences, NO_SEQ};
use crate::histogram::BUCKETS;
use crate::layout::BuiltFile;
use crate::page::{decode_page, PageImage};
use crate::store::Store;

pub const SST_MAGIC: u64 = 0x4c45_5448_454b_5631;
pub const SST_FORMAT_VERSION: u32 = 1;
const TRAILER_BYTES: usize = 8 + 8 + 4 + 4 + 8;

/// Per-file manifest record.
#[derive(Debug, Clone, PartialEq)]
pub struct FileMeta {
    pub file_id: u64,
    /// Disk level, starting at 1.
    pub level: u32,
    /// Covers point entries and range-tombstone extents; inclusive.
    pub min_sort_key: u64,
    pub max_sort_key: u64,
    pub min_delete_key: u64,
    pub max_delete_key: u64,
    pub num_entries: u64,
    pub num_point_tombstones: u64,
    pub num_range_tombstones: u64,
    /// Encoded bytes of live entries plus range tombstones.
    pub entry_bytes: u64,
    pub min_seqnum: u64,
    pub max_seqnum: u64,
    /// Seqnum of the oldest point or range tombstone.
    pub age_anchor_seqnum: Option<u64>,
    /// Estimated entries invalidated by this file's tombstones.
    pub b_f: f64,
    /// Logical ticks at which the file entered its level.
    pub level_arrival_time: u64,
    /// TTL of the level, logical seconds.
    pub ttl: f64,
}

impl FileMeta {
    pub fn tombstone_count(&self) -> u64 {
        self.num_point_tombstones + self.num_range_tombstones
    }

    pub fn overlaps(&self, lo: u64, hi: u64) -> bool {
        self.min_sort_key <= hi && lo <= self.max_sort_key
    }
}

#[derive(Debug, Clone)]
pub struct SstFile {
    pub meta: FileMeta,
    pub tiles: Vec<DeleteTileMeta>,
    pub fences: SortKeyFences,
    /// Indexed by physical page slot.
    pub filters: Vec<PageBloomFilter>,
    /// Sorted by `lo`.
    pub range_tombstones: Vec<RangeTombstone>,
    /// Point-entry counts per histogram bucket.
    pub histogram: Vec<u64>,
    pub page_size: usize,
    pub num_slots: u32,
}

pub type FileRef = Arc<SstFile>;

pub fn file_name(file_id: u64) -> String {
    format!("{file_id:010}.sst")
}

impl SstFile {
    pub fn name(&self) -> String {
        file_name(self.meta.file_id)
    }

    /// Writes a built file and returns its handle. `level`, arrival time, TTL
    /// and `b_f` are left for the caller.
    pub fn create(
        store: &dyn Store,
        file_id: u64,
        built: BuiltFile,
        mut range_tombstones: Vec<RangeTombstone>,
        histogram: Vec<u64>,
        page_size: usize,
    ) -> Result<SstFile> {
        range_tombstones.sort_by_key(|r| (r.lo, r.seqnum));
        let mut data = Vec::with_capacity(built.pages.len() * page_size);
        let mut min_seq = u64::MAX;
        let mut max_seq = 0;
        for p in &built.pages {
            data.extend_from_slice(&p.to_bytes());
            for e in &p.entries {
                min_seq = min_seq.min(e.seqnum);
                max_seq = max_seq.max(e.seqnum);
            }
        }
        for r in &range_tombstones {
            min_seq = min_seq.min(r.seqnum);
            max_seq = max_seq.max(r.seqnum);
        }
        let num_slots = built.pages.len() as u32;
        let fences = SortKeyFences::from_tiles(&built.tiles);
        let mut file = SstFile {
            meta: FileMeta {
                file_id,
                level: 0,
                min_sort_key: 0,
                max_sort_key: 0,
                min_delete_key: 0,
                max_delete_key: 0,
                num_entries: 0,
                num_point_tombstones: 0,
                num_range_tombstones: 0,
                entry_bytes: 0,
                min_seqnum: min_seq,
                max_seqnum: max_seq,
                age_anchor_seqnum: None,
                b_f: 0.0,
                level_arrival_time: 0,
                ttl: 0.0,
            },
            tiles: built.tiles,
            fences,
            filters: built.filters,
            range_tombstones,
            histogram,
            page_size,
            num_slots,
        };
        file.refresh_meta(&built.pages);
        let meta_offset = data.len() as u64;
        data.extend_from_slice(&file.encode_metadata(meta_offset));
        store.write_all(&file.name(), &data)?;
        Ok(file)
    }

    /// Recomputes counts and key ranges from tile bookkeeping. `pages` may be
    /// empty, in which case sort/delete ranges come from fences.
    pub fn refresh_meta(&mut self, pages: &[PageImage]) {
        let m = &mut self.meta;
        m.num_entries = 0;
        m.num_point_tombstones = 0;
        m.entry_bytes = 0;
        let mut anchor = NO_SEQ;
        let mut min_sort = u64::MAX;
        let mut max_sort = 0;
        let mut min_del = u64::MAX;
        let mut max_del = 0;
        for t in &self.tiles {
            let live: Vec<&PageSlot> = t.pages.iter().filter(|p| p.live).collect();
            if !live.is_empty() {
                min_sort = min_sort.min(t.min_sort_key);
                max_sort = max_sort.max(t.max_sort_key);
                min_del = min_del.min(live.iter().map(|p| p.min_delete_key).min().unwrap());
                max_del = max_del.max(t.tile_max_delete_key);
            }
            for p in live {
                m.num_entries += p.entry_count as u64;
                m.num_point_tombstones += p.point_tombstones as u64;
                m.entry_bytes += p.entry_bytes as u64;
                anchor = anchor.min(p.min_tombstone_seq);
            }
        }
        if !pages.is_empty() {
            // exact extremes at build time
            min_del = pages.iter().map(|p| p.header.min_delete_key).min().unwrap_or(min_del);
            max_del = pages.iter().map(|p| p.header.max_delete_key).max().unwrap_or(max_del);
        }
        for r in &self.range_tombstones {
            min_sort = min_sort.min(r.lo);
            max_sort = max_sort.max(r.hi - 1);
            anchor = anchor.min(r.seqnum);
            m.entry_bytes += r.encoded_len() as u64;
        }
        m.num_range_tombstones = self.range_tombstones.len() as u64;
        m.age_anchor_seqnum = (anchor != NO_SEQ).then_some(anchor);
        if min_sort == u64::MAX && max_sort == 0 {
            min_sort = 0;
        }
        m.min_sort_key = min_sort;
        m.max_sort_key = max_sort;
        m.min_delete_key = if min_del == u64::MAX { 0 } else { min_del };
        m.max_delete_key = max_del;
    }

    pub fn is_empty(&self) -> bool {
        self.meta.num_entries == 0 && self.range_tombstones.is_empty()
    }

    fn encode_metadata(&self, meta_offset: u64) -> Vec<u8> {
        let mut e = Enc::new();
        e.u32(self.range_tombstones.len() as u32);
        for r in &self.range_tombstones {
            e.u64(r.lo).u64(r.hi).u64(r.seqnum).u64(r.delete_key);
        }
        e.u32(self.filters.len() as u32);
        for f in &self.filters {
            f.encode_into(&mut e.buf);
        }
        e.u32(self.tiles.len() as u32);
        for t in &self.tiles {
            e.u64(t.min_sort_key).u64(t.max_sort_key).u64(t.tile_max_delete_key).u32(t.pages.len() as u32);
            for p in &t.pages {
                e.u32(p.slot)
                    .u64(p.min_delete_key)
                    .u8(p.live as u8 | (p.spills as u8) << 1)
                    .u32(p.entry_count)
                    .u32(p.entry_bytes)
                    .u32(p.point_tombstones)
                    .u64(p.min_tombstone_seq);
            }
        }
        let m = &self.meta;
        e.u64(m.file_id)
            .u32(m.level)
            .u64(m.min_seqnum)
            .u64(m.max_seqnum)
            .u64(m.level_arrival_time)
            .f64(m.ttl)
            .f64(m.b_f)
            .u32(self.page_size as u32)
            .u32(self.num_slots);
        e.u32(self.histogram.len() as u32);
        for c in &self.histogram {
            e.u64(*c);
        }
        let meta = e.buf;
        let mut t = Enc::new();
        t.bytes(&meta)
            .u64(meta_offset)
            .u64(meta.len() as u64)
            .u32(crc32fast::hash(&meta))
            .u32(SST_FORMAT_VERSION)
            .u64(SST_MAGIC);
        t.buf
    }

    pub fn open(store: &dyn Store, file_id: u64) -> Result<SstFile> {
        let name = file_name(file_id);
        let len = store.len(&name)?;
        if (len as usize) < TRAILER_BYTES {
            return Err(Error::corrupt(format!("{name}: too short")));
        }
        let trailer = store.read_at(&name, len - TRAILER_BYTES as u64, TRAILER_BYTES)?;
        let mut d = Dec::new(&trailer);
        let meta_offset = d.u64()?;
        let meta_len = d.u64()?;
        let crc = d.u32()?;
        let format = d.u32()?;
        let magic = d.u64()?;
        if magic != SST_MAGIC || format != SST_FORMAT_VERSION {
            return Err(Error::corrupt(format!("{name}: bad magic or format")));
        }
        let meta = store.read_at(&name, meta_offset, meta_len as usize)?;
        if crc32fast::hash(&meta) != crc {
            return Err(Error::corrupt(format!("{name}: metadata checksum mismatch")));
        }
        let mut d = Dec::new(&meta);
        let n_rt = d.u32()? as usize;
        let mut range_tombstones = Vec::with_capacity(n_rt);
        for _ in 0..n_rt {
            range_tombstones.push(RangeTombstone {
                lo: d.u64()?,
                hi: d.u64()?,
                seqnum: d.u64()?,
                delete_key: d.u64()?,
            });
        }
        let n_filters = d.u32()? as usize;
        let mut filters = Vec::with_capacity(n_filters);
        for _ in 0..n_filters {
            let rest = d.rest();
            let (f, used) = PageBloomFilter::decode(rest).ok_or_else(|| Error::corrupt("bad filter"))?;
            filters.push(f);
            d = Dec::new(&rest[used..]);
        }
        let n_tiles = d.u32()? as usize;
        let mut tiles = Vec::with_capacity(n_tiles);
        for _ in 0..n_tiles {
            let min_sort_key = d.u64()?;
            let max_sort_key = d.u64()?;
            let tile_max_delete_key = d.u64()?;
            let n = d.u32()? as usize;
            let mut pages = Vec::with_capacity(n);
            for _ in 0..n {
                let slot = d.u32()?;
                let min_delete_key = d.u64()?;
                let flags = d.u8()?;
                pages.push(PageSlot {
                    slot,
                    min_delete_key,
                    live: flags & 1 != 0,
                    spills: flags & 2 != 0,
                    entry_count: d.u32()?,
                    entry_bytes: d.u32()?,
                    point_tombstones: d.u32()?,
                    min_tombstone_seq: d.u64()?,
                });
            }
            tiles.push(DeleteTileMeta { min_sort_key, max_sort_key, tile_max_delete_key, pages });
        }
        let file_id_stored = d.u64()?;
        if file_id_stored != file_id {
            return Err(Error::corrupt(format!("{name}: file id mismatch")));
        }
        let level = d.u32()?;
        let min_seqnum = d.u64()?;
        let max_seqnum = d.u64()?;
        let level_arrival_time = d.u64()?;
        let ttl = d.f64()?;
        let b_f = d.f64()?;
        let page_size = d.u32()? as usize;
        let num_slots = d.u32()?;
        let n_hist = d.u32()? as usize;
        if n_hist != BUCKETS {
            return Err(Error::corrupt(format!("{name}: histogram has {n_hist} buckets")));
        }
        let mut histogram = Vec::with_capacity(n_hist);
        for _ in 0..n_hist {
            histogram.push(d.u64()?);
        }
        let fences = SortKeyFences::from_tiles(&tiles);
        let mut file = SstFile {
            meta: FileMeta {
                file_id,
                level,
                min_sort_key: 0,
                max_sort_key: 0,
                min_delete_key: 0,
                max_delete_key: 0,
                num_entries: 0,
                num_point_tombstones: 0,
                num_range_tombstones: 0,
                entry_bytes: 0,
                min_seqnum,
                max_seqnum,
                age_anchor_seqnum: None,
                b_f,
                level_arrival_time,
                ttl,
            },
            tiles,
            fences,
            filters,
            range_tombstones,
            histogram,
            page_size,
            num_slots,
        };
        file.refresh_meta(&[]);
        Ok(file)
    }

    /// Rewrites the metadata region after page drops or edits.
    pub fn persist_metadata(&self, store: &dyn Store) -> Result<()> {
        let offset = self.num_slots as u64 * self.page_size as u64;
        let bytes = self.encode_metadata(offset);
        store.write_at(&self.name(), offset, &bytes)?;
        store.truncate(&self.name(), offset + bytes.len() as u64)
    }

    pub fn read_page(&self, store: &dyn Store, slot: u32) -> Result<PageImage> {
        let bytes = store.read_at(&self.name(), slot as u64 * self.page_size as u64, self.page_size)?;
        decode_page(&bytes)
    }

    pub fn write_page(&self, store: &dyn Store, slot: u32, page: &PageImage) -> Result<()> {
        store.write_at(&self.name(), slot as u64 * self.page_size as u64, &page.to_bytes())
    }

    pub fn zero_page(&self, store: &dyn Store, slot: u32) -> Result<()> {
        store.write_at(&self.name(), slot as u64 * self.page_size as u64, &vec![0u8; self.page_size])
    }

    /// Every live point entry, tile by tile, in layout order.
    pub fn read_live_entries(&self, store: &dyn Store) -> Result<Vec<Entry>> {
        let mut out = Vec::with_capacity(self.meta.num_entries as usize);
        for t in &self.tiles {
            for (_, p) in t.live_pages() {
                out.extend(self.read_page(store, p.slot)?.entries);
            }
        }
        Ok(out)
    }

    /// Highest seqnum among this file's range tombstones covering `key`.
    pub fn max_covering_rt(&self, key: u64) -> Option<u64> {
        self.range_tombstones.iter().filter(|r| r.covers(key)).map(|r| r.seqnum).max()
    }

    pub fn live_pages(&self) -> u64 {
        self.tiles.iter().map(|t| t.live_pages().count() as u64).sum()
    }

    pub fn filter_bytes(&self) -> u64 {
        self.tiles
            .iter()
            .flat_map(|t| t.live_pages())
            .map(|(_, p)| self.filters[p.slot as usize].memory_bytes() as u64)
            .sum()
    }
}
