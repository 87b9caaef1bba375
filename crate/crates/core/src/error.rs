use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs that fail structural validation: dimension mismatches,
    /// non-normalized states, out-of-range indices, bad parameter values.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical routine could not complete: eigensolver stalled,
    /// Cholesky of a non-positive matrix, solver infeasibility.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Configuration file problems: parse errors, unknown schema version,
    /// missing or inconsistent fields.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
