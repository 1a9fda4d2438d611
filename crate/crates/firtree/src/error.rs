use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data (shapes, ranges, alignment).
    #[error("input error: {0}")]
    Input(String),

    /// A tree mapping matrix that does not describe a valid decision tree.
    #[error("tree specification error: {0}")]
    Tree(String),

    /// A quantity that is mathematically undefined for the given data.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
