use thiserror::Error;

pub type Result<T, E = FalError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("projection failed: {0}")]
    Projection(String),

    #[error(
        "cannot place {requested} points with minimum separation {delta}: \
         packing stalled after {placed} points"
    )]
    PackingInfeasible {
        requested: usize,
        placed: usize,
        delta: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("missing update from client {0}")]
    MissingClientDelta(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FalError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FalError::InvalidArgument(msg.into())
    }
}
