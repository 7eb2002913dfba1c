use thiserror::Error;

pub type Result<T> = std::result::Result<T, GpError>;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },

    /// A Cholesky factorisation failed even after the jitter was added.
    #[error("matrix `{matrix}` is not positive definite after adding jitter {jitter:e}")]
    Conditioning { matrix: &'static str, jitter: f64 },

    /// The old posterior does not define a valid Gaussian message
    /// (it is wider than the old prior in some direction).
    #[error("invalid old-posterior message: {0}")]
    InvalidMessage(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("stream aborted at batch {batch}")]
    Stream {
        batch: usize,
        #[source]
        source: Box<GpError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GpError::InvalidInput(msg.into())
    }
}
