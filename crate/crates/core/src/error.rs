//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the audit toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown architecture {0:?} (expected MLP-1, CNN-1 or CNN-2)")]
    UnknownArchitecture(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error("index {index} out of range for dataset of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("unsupported glyph {0:?} (5x5 font covers A-Z)")]
    UnsupportedGlyph(char),

    #[error("patch does not fit: offset {offset:?} + size {size} exceeds image {dims:?}")]
    PatchOutOfBounds {
        offset: (usize, usize),
        size: usize,
        dims: (usize, usize),
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
