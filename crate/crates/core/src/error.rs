//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SfeError {
    /// Input data violates a documented precondition (non-finite pixels,
    /// inconsistent dimensions, negative probabilities, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A byte-level file format violation. `offset` is the position in the
    /// file where the problem was detected.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// A computation produced non-finite values.
    #[error("numerical failure in {context}")]
    Numerical { context: String },

    /// Tensor/model shape mismatch.
    #[error("structural mismatch: {0}")]
    Structure(String),

    /// A multi-step procedure was invoked in an unusable state
    /// (empty query set, unlabeled support, too few points, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Configuration parse or validation failure. `path` locates the field,
    /// e.g. `$.train.batch_size`.
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },

    /// No usable samples where at least one was required.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Json { path: PathBuf, msg: String },
}

impl SfeError {
    /// Wrap an I/O error with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SfeError::Io { path: path.into(), source }
    }

    /// True for errors that indicate a bad invocation (usage or config)
    /// rather than a failure while doing the work.
    pub fn is_usage(&self) -> bool {
        matches!(self, SfeError::Param(_) | SfeError::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, SfeError>;
