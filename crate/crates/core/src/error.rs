use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input outside the closure domain: {0}")]
    Domain(String),

    #[error("numerically singular: {0}")]
    Singular(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("too few posterior samples: need at least 2, got {0}")]
    TooFewSamples(usize),

    #[error("non-finite parameters")]
    NonFinite,

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing prerequisite: {0}")]
    Missing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
