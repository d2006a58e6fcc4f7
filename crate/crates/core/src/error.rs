use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::VisitKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures reported by embedding and generation backends.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    /// Network or non-200 failure; retried with backoff.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The provider kept failing after every retry.
    #[error("provider '{provider}' unavailable after {attempts} attempts: {last}")]
    Unavailable {
        provider: String,
        attempts: u32,
        last: String,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("unknown note type '{0}'")]
    UnknownNoteType(String),
    #[error("invalid rule set: {0}")]
    InvalidRules(String),
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error("overlap ({overlap}) must be smaller than window size ({window})")]
    InvalidWindow { window: usize, overlap: usize },
    #[error("chunk gap: previous chunk ends at {prev_end}, next starts at {start}")]
    ChunkGap { prev_end: usize, start: usize },
    #[error("inconsistent chunk sequence: {0}")]
    InconsistentChunks(String),
    #[error("embedding of empty text requested at position {0}")]
    EmptyText(usize),
    #[error("vector dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("provider mismatch: index built with '{expected}', got '{actual}'")]
    ProviderMismatch { expected: String, actual: String },
    #[error("chunk '{0}' already indexed with a different vector")]
    ConflictingVector(String),
    #[error("degenerate vector (zero or non-finite) for '{0}'")]
    DegenerateVector(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("visit index {index} out of range for timeline of {len} visits")]
    VisitOutOfRange { index: usize, len: usize },
    #[error("temporal prompt for visit {visit_index} requires a previous-note summary")]
    MissingSummary { visit_index: usize },
    #[error("first-visit prompt must not carry a previous-note summary")]
    UnexpectedSummary,
    #[error("prompt cannot fit budget of {budget} chars even without evidence ({required} required)")]
    PromptTooLong { budget: usize, required: usize },
    #[error("generation failed for visit {key}: {source}")]
    Generation {
        key: VisitKey,
        #[source]
        source: ProviderError,
    },
    #[error("length ratio undefined: gold note has no tokens")]
    EmptyGold,
    #[error("no scored pairs to aggregate")]
    EmptyReport,
    #[error("config field '{field}': {message}")]
    Config { field: String, message: String },
    #[error("stage '{stage}' needs output of stage '{missing}', which has not been run ({path})")]
    MissingStage {
        stage: String,
        missing: String,
        path: PathBuf,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
