use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file}: {msg}")]
    Parse { file: String, msg: String },

    #[error("subject-id mismatch: {0}")]
    SubjectMismatch(String),

    #[error("unmapped SNP `{0}` in genotype file")]
    UnmappedSnp(String),

    #[error("non-positive time {time} for subject `{subject}`")]
    NonPositiveTime { subject: String, time: f64 },

    #[error("invalid structure: {0}")]
    Structure(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("all Kaplan-Meier weights are zero for subtype `{0}`")]
    ZeroWeights(String),

    #[error("zero-variance block")]
    ZeroVariance,

    #[error("subtype `{subtype}` lost all {what} after missing-data filtering")]
    FilteredOut { subtype: String, what: &'static str },

    #[error("correlation matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("censoring calibration failed to bracket target {target}: rate range [{lo_rate}, {hi_rate}] over u in [{u_lo}, {u_hi}]")]
    Calibration {
        target: f64,
        lo_rate: f64,
        hi_rate: f64,
        u_lo: f64,
        u_hi: f64,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
