use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line-count mismatch: source has {source_lines} lines, target has {target_lines}")]
    LineCountMismatch { source_lines: usize, target_lines: usize },

    #[error("invalid UTF-8 in {path} at byte offset {offset}")]
    InvalidUtf8 { path: PathBuf, offset: usize },

    #[error("split sizes too large: valid {valid} + test {test} must be < {total} pairs")]
    SplitTooLarge { valid: usize, test: usize, total: usize },

    #[error("invalid synthetic task: {0}")]
    InvalidTask(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },

    #[error("backward called without a recorded forward pass")]
    NoRecordedForward,

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("top-w truncation requires 1 <= w <= |V| (got w={w}, |V|={vocab})")]
    InvalidTopW { w: usize, vocab: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {diagnostic}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        diagnostic: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient monolingual data: need {required} lines, have {available}")]
    InsufficientMonolingual { required: usize, available: usize },

    #[error("missing oracle reference set for sentence {0}")]
    MissingOracle(usize),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
