use std::path::PathBuf;

/// Errors produced by the metric library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported dimension {requested}: the direction-number table covers at most {max}")]
    UnsupportedDimension { requested: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    NotPsd {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("row {row} is not a probability vector (sum {sum}, min entry {min})")]
    InvalidPosterior { row: usize, sum: f64, min: f64 },

    #[error("singular regression design: all 1/n values coincide")]
    SingularFit,

    #[error("no ranking crossing found: {0}")]
    Construction(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFinite { path: PathBuf, row: usize, col: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
