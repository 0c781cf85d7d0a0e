use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("hash ring has no targets")]
    EmptyRing,

    #[error("no available candidate")]
    NoCandidate,

    #[error("target {0} already present")]
    DuplicateTarget(u32),

    #[error("target {0} not present")]
    UnknownTarget(u32),

    #[error("cannot remove the last target from a ring")]
    LastTarget,

    #[error("invalid scenario: {path}: {message}")]
    Validation { path: String, message: String },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed log record {index}: {message}")]
    MalformedLog { index: usize, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
