use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("control history start times must be nondecreasing: appending {got} after {last}")]
    HistoryOrder { last: f64, got: f64 },

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("solver backend: {0}")]
    Backend(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
