use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {message} (condition estimate {condition:.3e})")]
    NumericFailure { message: String, condition: f64 },

    #[error("graph contains a cycle through node {node}; use the fixed-point solver")]
    CyclicGraph { node: usize },

    #[error("evaluation of node {node} failed: {message}")]
    NodeEvaluation { node: usize, message: String },

    #[error("fixed-point solve failed (best residual {residual:.3e})")]
    FixedPoint { residual: f64 },

    #[error("network state has not converged (residual {residual:.3e})")]
    InvalidState { residual: f64 },

    #[error("grid of {cells} cells exceeds the memory budget; try a resolution of {suggested} per dimension")]
    Resolution { cells: u128, suggested: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
