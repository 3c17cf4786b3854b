use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid label {0}: labels must be -1 or +1")]
    InvalidLabel(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty cell {0}")]
    EmptyCell(String),

    #[error("surrogate {kind} requires a binary sensitive attribute, found {groups} groups")]
    NonBinaryGroups { kind: &'static str, groups: usize },

    #[error("surrogate direction has not been resolved against a snapshot")]
    Unresolved,

    #[error("non-finite objective at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("degenerate variance in first-order check: {0}")]
    DegenerateVariance(String),

    #[error("{}:{line}: {msg}", path.display())]
    Csv {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
