use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("boundary validation failed: {0}")]
    Validation(String),

    #[error("quadrature did not converge on [{lo}, {hi}] (estimated error {err:e})")]
    Quadrature { lo: f64, hi: f64, err: f64 },

    #[error("exponent overflow: {0}")]
    Overflow(String),

    #[error("budget exhausted: {0}")]
    Budget(String),

    #[error("insufficient surviving paths: {0}")]
    Insufficient(String),

    #[error("argument outside the tabulated range: {0}")]
    OutOfRange(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Validation(_) | Error::Config(_) => 2,
            Error::Budget(_) | Error::Insufficient(_) | Error::OutOfRange(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
