//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix did not have the expected dimensions.
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Input violated a structural invariant (bad index, non-finite value, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A point set was too small or rank-deficient for the requested solve.
    #[error("degenerate correspondence set: {0}")]
    Degenerate(String),

    /// An iterative solve diverged or produced no usable correspondences.
    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    /// No visible surface points; the dense photometric term is undefined.
    #[error("empty visible set: no surface point survived the depth test")]
    EmptyVisibleSet,

    /// A loss or energy evaluated to a non-finite value.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// File format violation while reading one of the container formats.
    #[error("format error in {format}: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn format(format: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: msg.into(),
        }
    }
}
