//! Records stored in the buffer, the WAL and on-disk pages.

use crate::error::{Error, Result};

/// Fixed header of every encoded entry:
/// sort key, delete key, seqnum (u64 each), kind (u8), value length (u32).
pub const ENTRY_HEADER_BYTES: usize = 8 + 8 + 8 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum EntryKind {
    Put = 0,
    PointTombstone = 1,
    RangeTombstone = 2,
}

impl EntryKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(EntryKind::Put),
            1 => Ok(EntryKind::PointTombstone),
            2 => Ok(EntryKind::RangeTombstone),
            other => Err(Error::corrupt(format!("unknown entry kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub sort_key: u64,
    pub delete_key: u64,
    pub seqnum: u64,
    pub kind: EntryKind,
    pub value: Vec<u8>,
}

impl Entry {
    pub fn put(sort_key: u64, delete_key: u64, seqnum: u64, value: Vec<u8>) -> Self {
        Entry { sort_key, delete_key, seqnum, kind: EntryKind::Put, value }
    }

    pub fn tombstone(sort_key: u64, delete_key: u64, seqnum: u64) -> Self {
        Entry { sort_key, delete_key, seqnum, kind: EntryKind::PointTombstone, value: Vec::new() }
    }

    /// Range tombstone over `[lo, hi)`. The sort key is `lo`; the value carries both bounds.
    pub fn range_tombstone(lo: u64, hi: u64, delete_key: u64, seqnum: u64) -> Self {
        let mut value = Vec::with_capacity(16);
        value.extend_from_slice(&lo.to_le_bytes());
        value.extend_from_slice(&hi.to_le_bytes());
        Entry { sort_key: lo, delete_key, seqnum, kind: EntryKind::RangeTombstone, value }
    }

    pub fn is_tombstone(&self) -> bool {
        self.kind != EntryKind::Put
    }

    /// `[lo, hi)` for a range tombstone.
    pub fn range(&self) -> Option<(u64, u64)> {
        if self.kind != EntryKind::RangeTombstone || self.value.len() != 16 {
            return None;
        }
        let lo = u64::from_le_bytes(self.value[..8].try_into().unwrap());
        let hi = u64::from_le_bytes(self.value[8..].try_into().unwrap());
        Some((lo, hi))
    }

    pub fn encoded_len(&self) -> usize {
        ENTRY_HEADER_BYTES + self.value.len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.sort_key.to_le_bytes());
        out.extend_from_slice(&self.delete_key.to_le_bytes());
        out.extend_from_slice(&self.seqnum.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.value.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.value);
    }

    /// Decodes one entry from the front of `buf`, returning it and the bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Entry, usize)> {
        if buf.len() < ENTRY_HEADER_BYTES {
            return Err(Error::corrupt("truncated entry header"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        let sort_key = u64_at(0);
        let delete_key = u64_at(8);
        let seqnum = u64_at(16);
        let kind = EntryKind::from_u8(buf[24])?;
        let len = u32::from_le_bytes(buf[25..29].try_into().unwrap()) as usize;
        let end = ENTRY_HEADER_BYTES + len;
        if buf.len() < end {
            return Err(Error::corrupt("truncated entry value"));
        }
        let entry = Entry { sort_key, delete_key, seqnum, kind, value: buf[ENTRY_HEADER_BYTES..end].to_vec() };
        if kind == EntryKind::RangeTombstone {
            match entry.range() {
                Some((lo, hi)) if lo < hi => {}
                _ => return Err(Error::corrupt("malformed range tombstone")),
            }
        }
        Ok((entry, end))
    }
}

/// In-memory form of a range tombstone as held in a file's range-tombstone block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RangeTombstone {
    pub lo: u64,
    pub hi: u64,
    pub seqnum: u64,
    pub delete_key: u64,
}

impl RangeTombstone {
    pub fn covers(&self, key: u64) -> bool {
        self.lo <= key && key < self.hi
    }

    pub fn to_entry(self) -> Entry {
        Entry::range_tombstone(self.lo, self.hi, self.delete_key, self.seqnum)
    }

    pub fn from_entry(e: &Entry) -> Option<Self> {
        let (lo, hi) = e.range()?;
        Some(RangeTombstone { lo, hi, seqnum: e.seqnum, delete_key: e.delete_key })
    }

    pub fn encoded_len(&self) -> usize {
        ENTRY_HEADER_BYTES + 16
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_kinds() {
        for e in
            [Entry::put(5, 9, 1, b"hello".to_vec()), Entry::tombstone(7, 2, 3), Entry::range_tombstone(10, 20, 4, 5)]
        {
            let mut buf = Vec::new();
            e.encode_into(&mut buf);
            assert_eq!(buf.len(), e.encoded_len());
            let (d, used) = Entry::decode(&buf).unwrap();
            assert_eq!(used, buf.len());
            assert_eq!(d, e);
        }
    }

    #[test]
    fn tombstones_are_header_only() {
        assert_eq!(Entry::tombstone(1, 1, 1).encoded_len(), ENTRY_HEADER_BYTES);
    }

    #[test]
    fn rejects_inverted_range_tombstone() {
        let mut buf = Vec::new();
        Entry::range_tombstone(20, 10, 0, 1).encode_into(&mut buf);
        assert!(matches!(Entry::decode(&buf), Err(Error::Corrupt(_))));
    }
}
