use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// The design matrix cannot support the requested operation
    /// (e.g. every column has zero variance).
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// A cross-validation fold lost one of the two classes or an index
    /// was out of range.
    #[error("fold degenerate: {0}")]
    FoldDegenerate(String),

    /// A file could not be parsed; the message carries the row/column
    /// location when one is known.
    #[error("parse error: {0}")]
    Parse(String),

    /// Invalid configuration or arguments.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The optimiser failed to produce a usable solution.
    #[error("solver error: {0}")]
    Solver(String),

    /// The surrogate-based search aborted.
    #[error("epsgo error: {0}")]
    Epsgo(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
