use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: column `{0}` not found")]
    MissingColumn(String),
    #[error("parse error at row {row}, column `{column}`: cannot read `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("invalid data: {0}")]
    Invariant(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("fit error: {0}")]
    Fit(String),
    #[error("propensity error: {0}")]
    Propensity(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported outcome: {0}")]
    UnsupportedOutcome(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numeric routines rather than the input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Estimation(_) | Error::Fit(_) | Error::Propensity(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
