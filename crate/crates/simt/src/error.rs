//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible for an operation.
    #[error("shape mismatch in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid input data (out-of-range ids, malformed values).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// API misuse (bad configuration, wrong call order).
    #[error("usage error: {0}")]
    Usage(String),

    /// A delay schedule that never reads the full source.
    #[error("incomplete schedule: g(t) never reaches |x| = {src_len}")]
    IncompleteSchedule { src_len: usize },

    /// A decode trace with no recorded steps.
    #[error("empty trace: no decode steps recorded")]
    EmptyTrace,

    /// Training loss became non-finite.
    #[error("training diverged at update {update}: loss = {loss}")]
    Diverged { update: usize, loss: f64 },

    /// Malformed line in a text corpus file.
    #[error("parse error at line {line}: {msg}")]
    ParseLine { line: usize, msg: String },

    /// Malformed or truncated checkpoint file.
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
