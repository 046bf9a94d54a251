use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("unknown chunk id {0:?}")]
    UnknownChunk(String),

    #[error("transport error talking to {endpoint}: {cause}")]
    Transport { endpoint: String, cause: String },

    #[error("missing manifest in {0}")]
    MissingManifest(PathBuf),

    #[error("index version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checksum mismatch for {file}")]
    Checksum { file: String },

    #[error("corrupt index: {0}")]
    Corrupt(String),

    #[error("scaffold exceeds budget: needs {needed} tokens, budget is {budget}")]
    ScaffoldExceedsBudget { needed: usize, budget: usize },

    #[error("sequence length {len} exceeds capacity {capacity}; see selfextend::capacity")]
    ExceedsCapacity { len: usize, capacity: usize },

    #[error("question {0} has no gold answer; use run_predict for unlabeled sets")]
    Unlabeled(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn transport(endpoint: &str, cause: impl ToString) -> Self {
        Error::Transport {
            endpoint: endpoint.to_string(),
            cause: cause.to_string(),
        }
    }
}
