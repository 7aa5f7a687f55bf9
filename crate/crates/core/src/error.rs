//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for the attempted operation.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A single shape is unusable for the attempted operation.
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    /// Signal too short, index out of range, and similar scalar-argument errors.
    #[error("{0}")]
    InvalidArgument(String),

    /// More scales requested than distinct non-DC frequency bins exist.
    #[error("requested {requested} scales but only {available} non-DC bins exist for window length {window_len}")]
    TooManyScales {
        requested: usize,
        available: usize,
        window_len: usize,
    },

    /// An operation contract was violated (non-scalar loss, empty power set, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid model or training configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Timestamp-feature or artifact schema mismatch.
    #[error("schema error: {0}")]
    Schema(String),

    /// Dataset ingestion failure; `row` is the 1-based data row when known.
    #[error("data error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    /// Non-finite value where a finite one is required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
