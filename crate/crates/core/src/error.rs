use std::path::PathBuf;

/// Errors produced by the despeckling library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed image file: {0}")]
    Format(String),

    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("incomplete Cholesky failed after {retries} shifted retries")]
    FactorizationFailed { retries: usize },

    #[error("numerical breakdown: {0}")]
    Breakdown(String),

    #[error("dense solve limited to {cap} unknowns, got {n}")]
    TooLarge { n: usize, cap: usize },
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
