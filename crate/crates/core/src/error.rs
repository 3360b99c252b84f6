use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("entries do not fit in one page ({needed} bytes, {available} available)")]
    Overflow { needed: usize, available: usize },

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("tree holds no entries")]
    EmptyTree,

    #[error("invalid range [{lo}, {hi})")]
    InvalidRange { lo: u64, hi: u64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),

    #[error("input is not sorted by sort key")]
    UnsortedInput,

    #[error("engine is closed")]
    Closed,

    #[error("value of {len} bytes exceeds the {max} byte limit")]
    ValueTooLarge { len: usize, max: usize },

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }
}
