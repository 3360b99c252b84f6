//! An LSM-tree key-value engine with delete-aware compaction and an
//! interweaved sort-key/delete-key storage layout.

pub mod bloom;
pub mod buffer;
pub mod clock;
pub mod codec;
pub mod compaction;
pub mod config;
pub mod engine;
pub mod entry;
pub mod error;
pub mod executor;
pub mod experiment;
pub mod fade;
pub mod fences;
pub mod histogram;
pub mod layout;
pub mod manifest;
pub mod metrics;
pub mod page;
pub mod par;
pub mod read;
pub mod srd;
pub mod sstable;
pub mod store;
pub mod tuner;
pub mod wal;
pub mod workload;

pub use config::Config;
pub use engine::{DeleteOutcome, Engine};
pub use entry::{Entry, EntryKind, RangeTombstone};
pub use error::{Error, Result};
