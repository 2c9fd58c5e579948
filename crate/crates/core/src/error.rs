use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants are grouped so a caller can tell configuration mistakes
/// (`InvalidParam`) apart from bad input data (I/O, formats, dimension
/// mismatches) and from numeric failures during training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty image")]
    EmptyImage,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{what}: dimension mismatch, expected {expected_w}x{expected_h}, got {actual_w}x{actual_h}")]
    DimMismatch {
        what: String,
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("no text regions found")]
    NoTextRegions,

    #[error("no valid anchors")]
    NoValidAnchors,

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad parameter values rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidParam(_))
    }

    /// True for numeric failures (non-finite losses or gradients).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
