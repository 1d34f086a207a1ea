use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("training diverged at epoch {epoch} (seed {seed}): {reason}")]
    Diverged { seed: u64, epoch: usize, reason: String },
    #[error("too few trials: {got} survived, at least {min} required")]
    TooFewTrials { got: usize, min: usize },
    #[error("checksum mismatch: manifest says {expected:08x}, payload hashes to {actual:08x}")]
    Checksum { expected: u32, actual: u32 },
    #[error("schema version mismatch: file has {found}, reader supports {expected}")]
    SchemaVersion { expected: u32, found: u32 },
    #[error("malformed container: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
