use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("conditioning event {assignment:?} has mass {mass:e}, below threshold")]
    ZeroMassCondition {
        /// (qubit, value) pairs of the offending assignment.
        assignment: Vec<(usize, u8)>,
        mass: f64,
    },

    #[error("incomplete model: {0}")]
    IncompleteModel(String),

    #[error("partition structure: {0}")]
    Partition(String),

    #[error("noise model: {0}")]
    NoiseModel(String),

    #[error("calibration matrix is numerically singular (condition estimate {condition:e})")]
    Conditioning { condition: f64 },

    #[error("transfer: {0}")]
    Transfer(String),

    #[error("training: {0}")]
    Training(String),

    #[error("rate of improvement undefined: unmitigated distance is zero")]
    UndefinedRate,

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: fingerprint mismatch (file {found}, expected {expected})")]
    HashMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Validation { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("experiment stage `{stage}` failed (seed {seed}): {message}")]
    Stage {
        stage: String,
        seed: u64,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
