use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("batch norm: {0}")]
    BatchNorm(String),

    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (videos: {videos:?}): {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, videos: Vec<String>, detail: String },

    #[error("format error in {path}: {detail} (at byte offset {offset})")]
    Format { path: PathBuf, offset: u64, detail: String },

    #[error("{path}:{line}: {detail}")]
    Record { path: PathBuf, line: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
