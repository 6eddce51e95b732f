use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the tiling/fusion/eval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file could not be decoded: bad header, payload length mismatch,
    /// unsupported sample layout, malformed JSON.
    #[error("{path}: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// A detection or annotation record failed validation. `index` is the
    /// zero-based record position in the input file.
    #[error("record {index}: {msg}")]
    Record { index: usize, msg: String },

    #[error("unknown tile id `{0}`")]
    UnknownTile(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn decode(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Decode {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
