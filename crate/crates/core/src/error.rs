use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unbounded sampling domain: {0}")]
    UnboundedDomain(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("integer overflow: {0}")]
    Overflow(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fit did not converge: {0}")]
    FitDiverged(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
