use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky factorization failed even with the largest jitter.
    #[error("{context}: matrix is not positive definite (last jitter {jitter:e}); the Gram system is ill-conditioned, e.g. duplicate inputs with zero noise")]
    NotPositiveDefinite { context: &'static str, jitter: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("reference set is empty")]
    EmptyReferences,

    #[error("candidate pool exhausted: every candidate has been evaluated")]
    PoolExhausted,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
