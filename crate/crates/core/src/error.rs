use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("channel group is empty")]
    EmptyGroup,

    #[error("channel index {index} out of range for {channels} channels")]
    ChannelOutOfRange { index: usize, channels: usize },

    #[error("channel groups overlap at channel {0}")]
    OverlappingGroups(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("mask has no true voxels")]
    EmptyMask,

    #[error("noise covariance is not positive semi-definite ({0})")]
    NotPositiveSemidefinite(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called with a stale or eval-mode cache")]
    StaleCache,

    #[error("zero-variance differences in paired t-test")]
    ZeroVariance,

    #[error("reference image has non-positive peak inside the mask")]
    ZeroPeak,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("tensor format: {0}")]
    Format(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

impl Error {
    pub(crate) fn dims(expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::DimensionMismatch {
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
