use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    /// Process exit code: 2 for config errors, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) | HarnessError::Csv(_) => 1,
        }
    }
}

impl From<privlasso_core::Error> for HarnessError {
    fn from(e: privlasso_core::Error) -> Self {
        use privlasso_core::Error as E;
        match e {
            E::InvalidParameter { .. } | E::DimensionMismatch(_) | E::Format(_) => HarnessError::Config(e.to_string()),
            E::Io(io) => HarnessError::Io(io),
            other => HarnessError::Numerical(other.to_string()),
        }
    }
}
