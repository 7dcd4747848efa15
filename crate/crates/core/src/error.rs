use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    /// The two laws have disjoint support, or the privacy noise is zero.
    #[error("divergence is infinite: {0}")]
    InfiniteDivergence(&'static str),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("solver diverged: {0}")]
    Diverged(String),

    #[error("no stable point available")]
    NoStablePoint,

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
