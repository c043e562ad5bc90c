//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty edge-list input")]
    EmptyInput,

    #[error("dyad ({i}, {j}) out of range for {n} nodes")]
    DyadOutOfRange { i: usize, j: usize, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("holdout requires {needed} zero dyads but only {available} are available")]
    NotEnoughZeroDyads { needed: usize, available: usize },

    #[error("partition covers {got} nodes, network has {expected}")]
    PartitionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("incremental statistics diverged from full recomputation: {0}")]
    StatsInconsistency(String),

    #[error("no post-burn-in iterations in trace")]
    EmptyTrace,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
