//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by callers that map errors to process exit
/// codes: bad configuration, bad data, or an environment/runtime failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates the panel schema (bad bin, bad target level, ...).
    #[error("schema violation: {0}")]
    Schema(String),

    /// A file could not be parsed; `line` is 1-based, counting the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Invalid configuration (out-of-range hyperparameter, bad split spec,
    /// missing file reference, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Inputs whose shapes or alignment do not match (row counts, era
    /// coverage, vector lengths).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Not enough history yet to compute a rolling quantity.
    #[error("insufficient history: {0}")]
    NotReady(String),

    /// A correlation is undefined because one side has zero variance.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// More initial trees were pruned than the booster allows.
    #[error("cannot prune {requested} of {n_trees} trees (limit {max_allowed})")]
    PruneCap {
        requested: usize,
        n_trees: usize,
        max_allowed: usize,
    },

    /// A series is too short for the requested statistic.
    #[error("series too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },

    /// Any other data-level problem (missing target, empty split, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err
            .position()
            .map(csv::Position::line)
            .unwrap_or_default();
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                line,
                message: format!("{other:?}"),
            },
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::PruneCap { .. } => ErrorClass::Config,
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::Shape(_)
            | Error::NotReady(_)
            | Error::UndefinedCorrelation(_)
            | Error::TooShort { .. }
            | Error::Data(_) => ErrorClass::Data,
            Error::Io(_) => ErrorClass::Runtime,
        }
    }
}
