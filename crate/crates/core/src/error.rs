use std::io;

/// Errors produced anywhere in the retrieval, feedback and evaluation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("duplicate passage id {0:?}")]
    DuplicateId(String),

    #[error("unknown passage id {0:?}")]
    UnknownId(String),

    #[error("no judgments for query {0:?}")]
    UnknownQuery(String),

    #[error("feedback set is empty")]
    EmptyFeedback,

    #[error("query has no tokens")]
    EmptyQuery,

    #[error("no ranked lists to aggregate")]
    EmptyInput,

    #[error("non-finite value in embedding at coordinate {0}")]
    NonFinite(usize),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures of the embedding/scoring backend rather than of the data.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::BackendUnavailable(_) | Error::Protocol(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
