use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix dimensions must be positive, got {n_rows}x{n_cols}")]
    EmptyShape { n_rows: usize, n_cols: usize },

    #[error("position ({row}, {col}) out of bounds for {n_rows}x{n_cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("duplicate position ({row}, {col})")]
    DuplicatePosition { row: usize, col: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("step caches do not match the cell: {0}")]
    CacheMismatch(String),

    #[error("gradient mask does not match parameter mask (slot {slot})")]
    MaskMismatch { slot: usize },

    #[error("optimizer state does not match parameter (slot {slot}): {detail}")]
    StateMismatch { slot: usize, detail: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint carries no epoch-0 snapshot; same-initialization mode is unavailable")]
    MissingInitialSnapshot,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
