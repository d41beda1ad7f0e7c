use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },

    #[error("duplicate point at index {index}")]
    DuplicatePoint { index: usize },

    #[error("PLY parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("truncated PLY body: header declares {declared} vertices, found {found}")]
    Truncation { declared: usize, found: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    #[error("insufficient points: requested {requested}, cloud has {available}")]
    InsufficientPoints { requested: usize, available: usize },

    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratio([f64; 3]),

    #[error("size mismatch: {left} vs {right} points")]
    SizeMismatch { left: usize, right: usize },

    #[error("exact search supports at most {max} points, got {n}")]
    TooLargeForExact { n: usize, max: usize },

    #[error("covariance is not positive definite")]
    Covariance,

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("grid evaluation supports dimensions 1 and 2, got {0}")]
    UnsupportedDimension(usize),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unsupported audio format: {0}")]
    Format(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("signal too short: {len} samples, window needs {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        Error::Dimension { expected, found }
    }
}

/// Attaches a pipeline stage name to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
