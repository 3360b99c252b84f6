//! Runs compaction plans against the current version.

use crate::compaction::{merge, split_outputs};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::fade::{CompactionPlan, Trigger};
use crate::manifest::RecordKind;
use crate::metrics::bump;
use crate::par;
use crate::sstable::{FileRef, SstFile};

/// What a plan turned into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompactionOutcome {
    /// The file was relinked one level down without a rewrite.
    Moved {
        file_id: u64,
    },
    Merged {
        inputs: Vec<u64>,
        outputs: Vec<u64>,
        bytes_read: u64,
        bytes_written: u64,
    },
}

impl Engine {
    fn find_files(&self, level: usize, ids: &[u64]) -> Result<Vec<FileRef>> {
        ids.iter()
            .map(|id| {
                self.version
                    .level(level)
                    .iter()
                    .find(|f| f.meta.file_id == *id)
                    .cloned()
                    .ok_or_else(|| Error::corrupt(format!("file {id} not in level {level}")))
            })
            .collect()
    }

    /// Merges the plan's files into the next level, or relinks a lone file
    /// when nothing there overlaps it.
    pub fn execute_compaction(&mut self, plan: &CompactionPlan) -> Result<CompactionOutcome> {
        let level = plan.source_level;
        let target = level + 1;
        let sources = self.find_files(level, &plan.sources)?;
        let targets = self.find_files(target, &plan.targets)?;
        let into_last = self.version.levels.iter().skip(target).all(|l| l.is_empty());
        let now = self.clock.now();

        if targets.is_empty() && sources.len() == 1 && !(into_last && sources[0].meta.tombstone_count() > 0) {
            let mut moved: SstFile = (*sources[0]).clone();
            moved.meta.level = target as u32;
            moved.meta.level_arrival_time = now;
            let id = moved.meta.file_id;
            self.install(RecordKind::Move, &[id], vec![moved])?;
            bump(&self.stats.moves, 1);
            return Ok(CompactionOutcome::Moved { file_id: id });
        }

        let inputs: Vec<FileRef> = sources.iter().chain(&targets).cloned().collect();
        let store = self.store.clone();
        let runs = par::map_with(self.cfg.exec, &inputs, |f| f.read_live_entries(store.as_ref()));
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let range_tombstones = inputs.iter().flat_map(|f| f.range_tombstones.iter().copied()).collect();
        let pages_read: u64 = inputs.iter().map(|f| f.live_pages()).sum();
        let bytes_read: u64 = inputs.iter().map(|f| f.meta.entry_bytes).sum();

        let merged = merge(runs, range_tombstones, into_last);
        let dropped = merged.dropped_tombstones;
        let chunks = split_outputs(merged, self.cfg.layout.file_capacity());
        let outputs = self.write_outputs(chunks, target as u32, now)?;
        let bytes_written: u64 = outputs.iter().map(|f| f.meta.entry_bytes).sum();
        let output_ids: Vec<u64> = outputs.iter().map(|f| f.meta.file_id).collect();
        let input_ids: Vec<u64> = inputs.iter().map(|f| f.meta.file_id).collect();

        self.install(RecordKind::Compaction, &input_ids, outputs)?;
        self.remove_files(&input_ids)?;

        let s = &self.stats;
        bump(&s.compactions, 1);
        if plan.trigger == Trigger::TtlExpiry {
            bump(&s.ttl_compactions, 1);
        }
        bump(&s.pages_read, pages_read);
        bump(&s.bytes_compaction_read, bytes_read);
        bump(&s.bytes_compacted, bytes_read);
        bump(&s.bytes_compaction_written, bytes_written);
        bump(&s.tombstones_dropped, dropped);
        Ok(CompactionOutcome::Merged { inputs: input_ids, outputs: output_ids, bytes_read, bytes_written })
    }
}
