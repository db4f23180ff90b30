use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error at data row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("degenerate treatment: {0}")]
    DegenerateTreatment(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("hyperparameter initialization failed: {0}")]
    Initialization(String),

    #[error("failure budget exceeded: {failures} of {attempts} {what} failed (budget {budget:.1}%)")]
    FailureBudget {
        what: &'static str,
        failures: usize,
        attempts: usize,
        budget: f64,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
