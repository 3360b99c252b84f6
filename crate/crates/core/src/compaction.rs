//! Merging and splitting for compaction output.

use crate::entry::{Entry, EntryKind, RangeTombstone};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeOutput {
    /// Newest surviving version per key, sorted by sort key.
    pub entries: Vec<Entry>,
    pub range_tombstones: Vec<RangeTombstone>,
    /// Point and range tombstones discarded at the last level.
    pub dropped_tombstones: u64,
    /// Versions discarded because a newer version or range tombstone exists.
    pub obsolete: u64,
}

/// Merges point entries and range tombstones from every input.
///
/// Each key keeps only its newest version, and that version is discarded when
/// a newer input range tombstone covers it. With `drop_tombstones` (nothing
/// older exists below the target) point and range tombstones disappear too.
pub fn merge(runs: Vec<Vec<Entry>>, mut range_tombstones: Vec<RangeTombstone>, drop_tombstones: bool) -> MergeOutput {
    let mut all: Vec<Entry> = runs.into_iter().flatten().collect();
    all.sort_unstable_by(|a, b| a.sort_key.cmp(&b.sort_key).then(b.seqnum.cmp(&a.seqnum)));
    range_tombstones.sort_by_key(|r| (r.lo, r.hi, r.seqnum));
    range_tombstones.dedup();

    let mut out = MergeOutput::default();
    let mut last = None;
    for e in all {
        if last == Some(e.sort_key) {
            out.obsolete += 1;
            continue;
        }
        last = Some(e.sort_key);
        let end = range_tombstones.partition_point(|r| r.lo <= e.sort_key);
        if range_tombstones[..end].iter().any(|r| r.covers(e.sort_key) && r.seqnum > e.seqnum) {
            out.obsolete += 1;
            continue;
        }
        if drop_tombstones && e.kind == EntryKind::PointTombstone {
            out.dropped_tombstones += 1;
            continue;
        }
        out.entries.push(e);
    }
    if drop_tombstones {
        out.dropped_tombstones += range_tombstones.len() as u64;
    } else {
        out.range_tombstones = range_tombstones;
    }
    out
}

/// One output file's contents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputChunk {
    pub entries: Vec<Entry>,
    pub range_tombstones: Vec<RangeTombstone>,
}

/// Splits merged output into files of at most `per_file` entries. Chunk `i`
/// owns `[first_key_i, first_key_{i+1})`, with the first and last chunks open
/// at the ends; each range tombstone is clipped to the chunks it touches.
pub fn split_outputs(out: MergeOutput, per_file: usize) -> Vec<OutputChunk> {
    let per_file = per_file.max(1);
    let mut chunks: Vec<OutputChunk> = Vec::new();
    let mut rest = out.entries;
    while !rest.is_empty() {
        let tail = rest.split_off(per_file.min(rest.len()));
        chunks.push(OutputChunk { entries: std::mem::replace(&mut rest, tail), range_tombstones: Vec::new() });
    }
    if chunks.is_empty() {
        if out.range_tombstones.is_empty() {
            return chunks;
        }
        chunks.push(OutputChunk::default());
    }
    let starts: Vec<u64> = chunks.iter().map(|c| c.entries.first().map_or(0, |e| e.sort_key)).collect();
    for r in out.range_tombstones {
        for (i, chunk) in chunks.iter_mut().enumerate() {
            let own_lo = if i == 0 { 0 } else { starts[i] };
            let own_hi = starts.get(i + 1).copied().unwrap_or(u64::MAX);
            let lo = r.lo.max(own_lo);
            let hi = r.hi.min(own_hi);
            if lo < hi {
                chunk.range_tombstones.push(RangeTombstone { lo, hi, ..r });
            }
        }
    }
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn rt(lo: u64, hi: u64, seqnum: u64) -> RangeTombstone {
        RangeTombstone { lo, hi, seqnum, delete_key: 0 }
    }

    #[test]
    fn newest_version_wins() {
        let older = vec![Entry::put(1, 0, 1, b"a".to_vec()), Entry::put(2, 0, 2, b"b".to_vec())];
        let newer = vec![Entry::put(1, 0, 5, b"c".to_vec()), Entry::tombstone(2, 0, 6)];
        let m = merge(vec![older, newer], vec![], false);
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].value, b"c");
        assert!(m.entries[1].is_tombstone());
        assert_eq!(m.obsolete, 2);
    }

    #[test]
    fn last_level_drops_tombstones() {
        let run = vec![Entry::put(1, 0, 1, vec![]), Entry::tombstone(2, 0, 6), Entry::put(5, 0, 2, vec![])];
        let m = merge(vec![run], vec![rt(4, 9, 3)], true);
        assert_eq!(m.entries.iter().map(|e| e.sort_key).collect::<Vec<_>>(), vec![1]);
        assert_eq!(m.dropped_tombstones, 2);
        assert!(m.range_tombstones.is_empty());
    }

    #[test]
    fn range_tombstone_shadows_only_older() {
        let run = vec![Entry::put(4, 0, 1, vec![]), Entry::put(5, 0, 9, vec![])];
        let m = merge(vec![run], vec![rt(4, 9, 3)], false);
        assert_eq!(m.entries.iter().map(|e| e.sort_key).collect::<Vec<_>>(), vec![5]);
        assert_eq!(m.range_tombstones, vec![rt(4, 9, 3)]);
    }

    #[test]
    fn split_clips_range_tombstones_to_owned_intervals() {
        let entries: Vec<Entry> = (0..6).map(|k| Entry::put(k * 10, 0, k, vec![])).collect();
        let out =
            MergeOutput { entries, range_tombstones: vec![rt(15, 45, 99), rt(100, 200, 98)], ..Default::default() };
        let chunks = split_outputs(out, 2);
        assert_eq!(chunks.len(), 3);
        // owned: [0, 20), [20, 40), [40, inf)
        assert_eq!(chunks[0].range_tombstones, vec![rt(15, 20, 99)]);
        assert_eq!(chunks[1].range_tombstones, vec![rt(20, 40, 99)]);
        assert_eq!(chunks[2].range_tombstones, vec![rt(40, 45, 99), rt(100, 200, 98)]);
    }

    #[test]
    fn split_only_range_tombstones() {
        let out = MergeOutput { range_tombstones: vec![rt(1, 2, 1)], ..Default::default() };
        let chunks = split_outputs(out, 4);
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].entries.is_empty());
        assert!(split_outputs(MergeOutput::default(), 4).is_empty());
    }

    fn resolve(runs: &[Vec<Entry>], rts: &[RangeTombstone], key: u64) -> Option<Vec<u8>> {
        let newest = runs.iter().flatten().filter(|e| e.sort_key == key).max_by_key(|e| e.seqnum)?;
        let shadow = rts.iter().filter(|r| r.covers(key)).map(|r| r.seqnum).max();
        if shadow.is_some_and(|s| s > newest.seqnum) || newest.is_tombstone() {
            None
        } else {
            Some(newest.value.clone())
        }
    }

    proptest! {
        #[test]
        fn merge_preserves_visible_state(
            ops in prop::collection::vec((0u64..32, 0u8..4), 1..120),
            ranges in prop::collection::vec((0u64..32, 1u64..8), 0..4),
            split in 1usize..12,
            drop in any::<bool>(),
        ) {
            let mut seq = 0;
            let mut runs: Vec<Vec<Entry>> = vec![Vec::new(); 3];
            for (i, (k, op)) in ops.iter().enumerate() {
                seq += 1;
                let e = if *op == 0 { Entry::tombstone(*k, 0, seq) } else { Entry::put(*k, 0, seq, vec![*op; 3]) };
                let run = &mut runs[i % 3];
                run.retain(|x: &Entry| x.sort_key != *k);
                run.push(e);
            }
            let rts: Vec<RangeTombstone> = ranges.iter().map(|(lo, w)| { seq += 1; rt(*lo, lo + w, seq) }).collect();
            let mut expect = BTreeMap::new();
            for k in 0..40 {
                if let Some(v) = resolve(&runs, &rts, k) { expect.insert(k, v); }
            }
            let chunks = split_outputs(merge(runs, rts, drop), split);
            let entries: Vec<Entry> = chunks.iter().flat_map(|c| c.entries.clone()).collect();
            let out_rts: Vec<RangeTombstone> = chunks.iter().flat_map(|c| c.range_tombstones.clone()).collect();
            prop_assert!(entries.windows(2).all(|w| w[0].sort_key < w[1].sort_key));
            for c in &chunks {
                prop_assert!(c.entries.len() <= split);
            }
            let got_runs = vec![entries.clone()];
            let mut got = BTreeMap::new();
            for k in 0..40 {
                if let Some(v) = resolve(&got_runs, &out_rts, k) { got.insert(k, v); }
            }
            prop_assert_eq!(got, expect);
            if drop {
                prop_assert!(entries.iter().all(|e| !e.is_tombstone()) && out_rts.is_empty());
            }
        }
    }
}
