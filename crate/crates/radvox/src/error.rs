use std::path::PathBuf;

/// Crate-wide error type. The `Display` text starts with a stable category
/// tag so CLI consumers can match on it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("header error: {0}")]
    Header(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("empty ROI: {0}")]
    EmptyRoi(String),

    #[error("empty matrix: {0}")]
    EmptyMatrix(String),

    #[error("unknown feature key: {0}")]
    UnknownFeature(String),

    #[error("feature/matrix mismatch: {0}")]
    FeatureMatrixMismatch(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("missing feature: {0}")]
    MissingFeature(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
