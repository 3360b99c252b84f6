//! Fixed-size disk pages.
//!
//! Layout (little-endian):
//!
//! ```text
//! 0   entry_count    u32
//! 4   min_sort_key   u64
//! 12  max_sort_key   u64
//! 20  min_delete_key u64
//! 28  max_delete_key u64
//! 36  payload_len    u32
//! 40  checksum       u32   crc32 over every other byte of the page
//! 44  entries...     zero padded to the page size
//! ```

use crate::entry::Entry;
use crate::error::{Error, Result};

pub const DEFAULT_PAGE_SIZE: usize = 4096;
pub const PAGE_HEADER_BYTES: usize = 44;
const CHECKSUM_OFFSET: usize = 40;

/// Sentinel stored in the min fields of an empty page.
pub const UNSET_MIN: u64 = u64::MAX;
/// Sentinel stored in the max fields of an empty page.
pub const UNSET_MAX: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageHeader {
    pub entry_count: u32,
    pub min_sort_key: u64,
    pub max_sort_key: u64,
    pub min_delete_key: u64,
    pub max_delete_key: u64,
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageImage {
    pub header: PageHeader,
    pub entries: Vec<Entry>,
    pub page_size: usize,
}

/// Entries of `entry_size` bytes that fit in one page next to the header.
pub fn page_capacity(page_size: usize, entry_size: usize) -> usize {
    page_size.saturating_sub(PAGE_HEADER_BYTES) / entry_size.max(1)
}

fn compute_header(entries: &[Entry]) -> PageHeader {
    let mut h = PageHeader {
        entry_count: entries.len() as u32,
        min_sort_key: UNSET_MIN,
        max_sort_key: UNSET_MAX,
        min_delete_key: UNSET_MIN,
        max_delete_key: UNSET_MAX,
        checksum: 0,
    };
    for e in entries {
        h.min_sort_key = h.min_sort_key.min(e.sort_key);
        h.max_sort_key = h.max_sort_key.max(e.sort_key);
        h.min_delete_key = h.min_delete_key.min(e.delete_key);
        h.max_delete_key = h.max_delete_key.max(e.delete_key);
    }
    h
}

fn checksum(buf: &[u8]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&buf[..CHECKSUM_OFFSET]);
    hasher.update(&buf[CHECKSUM_OFFSET + 4..]);
    hasher.finalize()
}

/// Builds a page from entries sorted by sort key.
pub fn encode_page(entries: Vec<Entry>, page_size: usize) -> Result<PageImage> {
    if entries.windows(2).any(|w| w[0].sort_key > w[1].sort_key) {
        return Err(Error::UnsortedInput);
    }
    let payload: usize = entries.iter().map(Entry::encoded_len).sum();
    let available = page_size.saturating_sub(PAGE_HEADER_BYTES);
    if payload > available {
        return Err(Error::Overflow { needed: payload, available });
    }
    let mut page = PageImage { header: compute_header(&entries), entries, page_size };
    let bytes = page.serialize();
    page.header.checksum = checksum(&bytes);
    Ok(page)
}

impl PageImage {
    fn serialize(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.page_size);
        let h = &self.header;
        buf.extend_from_slice(&h.entry_count.to_le_bytes());
        buf.extend_from_slice(&h.min_sort_key.to_le_bytes());
        buf.extend_from_slice(&h.max_sort_key.to_le_bytes());
        buf.extend_from_slice(&h.min_delete_key.to_le_bytes());
        buf.extend_from_slice(&h.max_delete_key.to_le_bytes());
        let payload: usize = self.entries.iter().map(Entry::encoded_len).sum();
        buf.extend_from_slice(&(payload as u32).to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        for e in &self.entries {
            e.encode_into(&mut buf);
        }
        buf.resize(self.page_size, 0);
        buf
    }

    /// Exactly `page_size` bytes with the checksum filled in.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = self.serialize();
        let crc = checksum(&buf);
        buf[CHECKSUM_OFFSET..CHECKSUM_OFFSET + 4].copy_from_slice(&crc.to_le_bytes());
        buf
    }

    /// Binary search on the sort key.
    pub fn find(&self, sort_key: u64) -> Option<&Entry> {
        self.entries.binary_search_by_key(&sort_key, |e| e.sort_key).ok().map(|i| &self.entries[i])
    }
}

pub fn decode_page(bytes: &[u8]) -> Result<PageImage> {
    if bytes.len() < PAGE_HEADER_BYTES {
        return Err(Error::corrupt("page shorter than its header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let stored = u32_at(CHECKSUM_OFFSET);
    if stored != checksum(bytes) {
        return Err(Error::corrupt("page checksum mismatch"));
    }
    let header = PageHeader {
        entry_count: u32_at(0),
        min_sort_key: u64_at(4),
        max_sort_key: u64_at(12),
        min_delete_key: u64_at(20),
        max_delete_key: u64_at(28),
        checksum: stored,
    };
    let payload_len = u32_at(36) as usize;
    if PAGE_HEADER_BYTES + payload_len > bytes.len() {
        return Err(Error::corrupt("page payload overruns page"));
    }
    let mut entries = Vec::with_capacity(header.entry_count as usize);
    let mut rest = &bytes[PAGE_HEADER_BYTES..PAGE_HEADER_BYTES + payload_len];
    while !rest.is_empty() {
        let (e, used) = Entry::decode(rest)?;
        entries.push(e);
        rest = &rest[used..];
    }
    if entries.len() != header.entry_count as usize {
        return Err(Error::corrupt("page entry count mismatch"));
    }
    Ok(PageImage { header, entries, page_size: bytes.len() })
}
