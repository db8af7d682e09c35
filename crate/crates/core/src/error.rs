use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the measurement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },

    #[error("cloud is in the {found} frame, expected {expected}")]
    WrongFrame {
        expected: &'static str,
        found: &'static str,
    },

    #[error("rotation is not proper orthonormal (orthogonality error {ortho:e}, det {det})")]
    InvalidRotation { ortho: f64, det: f64 },

    #[error("{op} needs at least {required} points, got {actual}")]
    TooFewPoints {
        op: &'static str,
        required: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

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

    #[error("seed point {seed} is labeled noise; increase the DBSCAN eps")]
    SeedIsNoise { seed: usize },

    #[error("Hough fit failed: best cell has {votes} votes, need {required}")]
    HoughNoConsensus { votes: u32, required: u32 },

    #[error("RANSAC consensus too small: {found} inliers, need {required}")]
    NoConsensus { found: usize, required: usize },

    #[error("hole pre-search found {found} candidates, expected {expected}")]
    HoleCount { found: usize, expected: usize },

    #[error("scene spec violates `{constraint}`: {detail}")]
    Scene {
        constraint: &'static str,
        detail: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used to pick a process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Unreadable or malformed input/output files.
    Io,
    /// Invalid configuration or parameters.
    Config,
    /// A processing stage could not produce a result.
    Processing,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Parse { .. } => ErrorKind::Io,
            Error::Config(_) | Error::InvalidParameter { .. } | Error::Scene { .. } => ErrorKind::Config,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Processing,
        }
    }

    /// Wraps `self` with the name of the stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
