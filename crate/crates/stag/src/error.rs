use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, StagError>;

/// Error taxonomy shared by the whole crate.
///
/// `Numerical` is the only variant that maps to a distinct process exit
/// code (3); everything else is reported as a data/usage failure (2).
#[derive(Debug, Error)]
pub enum StagError {
    #[error("invalid length: {0}")]
    InvalidLength(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid reduction: {0}")]
    InvalidReduction(String),

    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    #[error("video too short: {frames} frames, interval needs {needed}")]
    VideoTooShort { frames: usize, needed: usize },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("incomplete evaluation: {0}")]
    IncompleteEvaluation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("feature format error: {0}")]
    FeatureFormat(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl StagError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StagError::Io {
            path: path.into(),
            source,
        }
    }
}
