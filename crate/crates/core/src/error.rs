use thiserror::Error;

/// Errors produced by the simulation, learning, and reporting routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("missing or malformed header: {0}")]
    Header(String),

    #[error("malformed artifact at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("drop location not found after {0} halvings")]
    HalvingLimit(usize),

    #[error("driver {0} is not idle and cannot take an assignment")]
    DriverBusy(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
