use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: shape mismatch, left is {left:?}, right is {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("{op}: rank {rank} outside 1..={max}")]
    RankOutOfRange {
        op: &'static str,
        rank: usize,
        max: usize,
    },

    #[error("beta {0} outside [0, 1]")]
    BetaOutOfRange(f64),

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("columns are not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("columns are linearly dependent at column {column}")]
    RankDeficient { column: usize },

    #[error("accumulator holds no samples")]
    EmptyAccumulator,

    #[error("token length mismatch: expected {expected}, got {got}")]
    TokenLengthMismatch { expected: usize, got: usize },

    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::Divergence { .. } | Error::NonFinite { .. }
        )
    }
}
