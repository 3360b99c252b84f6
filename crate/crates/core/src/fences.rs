//! Fence pointers: sort-key minima per delete tile and delete-key minima per page.

use crate::error::{Error, Result};

/// Marker for "no tombstone" in per-page bookkeeping.
pub const NO_SEQ: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageSlot {
    /// Physical page index inside the file.
    pub slot: u32,
    /// Delete-key fence: smallest delete key in the page.
    pub min_delete_key: u64,
    pub live: bool,
    /// The page's largest delete key equals the next page's fence.
    pub spills: bool,
    pub entry_count: u32,
    /// Encoded bytes of the entries held.
    pub entry_bytes: u32,
    pub point_tombstones: u32,
    pub min_tombstone_seq: u64,
}

/// One delete tile: `h` pages ordered on the delete key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeleteTileMeta {
    pub min_sort_key: u64,
    pub max_sort_key: u64,
    pub tile_max_delete_key: u64,
    pub pages: Vec<PageSlot>,
}

impl DeleteTileMeta {
    pub fn live_pages(&self) -> impl Iterator<Item = (usize, &PageSlot)> {
        self.pages.iter().enumerate().filter(|(_, p)| p.live)
    }

    pub fn live_page_bitmap(&self) -> Vec<bool> {
        self.pages.iter().map(|p| p.live).collect()
    }

    /// Half-open delete-key span `[lo, hi)` of page `i`, widened to u128 so
    /// the last page can close at `u64::MAX + 1`.
    pub fn page_span(&self, i: usize) -> (u128, u128) {
        let lo = self.pages[i].min_delete_key as u128;
        let hi = match self.pages.get(i + 1) {
            Some(next) => next.min_delete_key as u128 + self.pages[i].spills as u128,
            None => self.tile_max_delete_key as u128 + 1,
        };
        (lo, hi.max(lo + 1))
    }

    pub fn is_empty(&self) -> bool {
        self.pages.iter().all(|p| !p.live)
    }
}

/// Sort-key fences of one file: the smallest sort key of every tile.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SortKeyFences {
    pub minima: Vec<u64>,
}

impl SortKeyFences {
    pub fn from_tiles(tiles: &[DeleteTileMeta]) -> Self {
        SortKeyFences { minima: tiles.iter().map(|t| t.min_sort_key).collect() }
    }

    /// Tile whose sort-key range may contain `key`.
    pub fn locate_tile(&self, key: u64) -> Option<usize> {
        match self.minima.partition_point(|&m| m <= key) {
            0 => None,
            n => Some(n - 1),
        }
    }
}

/// Pages of `tile` whose whole delete-key span lies inside `[d_lo, d_hi)`.
/// Only live pages are returned.
pub fn full_drop_candidates(tile: &DeleteTileMeta, d_lo: u64, d_hi: u64) -> Result<Vec<usize>> {
    if d_lo >= d_hi {
        return Err(Error::InvalidRange { lo: d_lo, hi: d_hi });
    }
    let (lo, hi) = (d_lo as u128, d_hi as u128);
    Ok(tile
        .live_pages()
        .filter(|(i, _)| {
            let (s, e) = tile.page_span(*i);
            s >= lo && e <= hi
        })
        .map(|(i, _)| i)
        .collect())
}

/// Live pages whose span intersects `[d_lo, d_hi)` without being contained in it.
pub fn boundary_pages(tile: &DeleteTileMeta, d_lo: u64, d_hi: u64) -> Vec<usize> {
    let (lo, hi) = (d_lo as u128, d_hi as u128);
    tile.live_pages()
        .filter(|(i, _)| {
            let (s, e) = tile.page_span(*i);
            let intersects = s < hi && e > lo;
            let contained = s >= lo && e <= hi;
            intersects && !contained
        })
        .map(|(i, _)| i)
        .collect()
}

/// Fence-pointer memory of a set of files, next to what a layout with one
/// sort-key fence per page would need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FenceMemory {
    pub tiles: u64,
    pub pages: u64,
    pub sort_fence_bytes: u64,
    pub delete_fence_bytes: u64,
    pub baseline_fence_bytes: u64,
}

impl FenceMemory {
    pub const SORT_KEY_BYTES: u64 = 8;
    pub const DELETE_KEY_BYTES: u64 = 8;

    pub fn add_tiles<'a>(&mut self, tiles: impl IntoIterator<Item = &'a DeleteTileMeta>) {
        for t in tiles {
            self.tiles += 1;
            self.pages += t.pages.len() as u64;
        }
        self.sort_fence_bytes = self.tiles * Self::SORT_KEY_BYTES;
        self.delete_fence_bytes = self.pages * Self::DELETE_KEY_BYTES;
        self.baseline_fence_bytes = self.pages * Self::SORT_KEY_BYTES;
    }

    pub fn total(&self) -> u64 {
        self.sort_fence_bytes + self.delete_fence_bytes
    }

    /// Extra bytes over the per-page sort-key fence baseline.
    pub fn overhead(&self) -> i64 {
        self.total() as i64 - self.baseline_fence_bytes as i64
    }
}
