use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("path parameter {s} outside domain [0, {s_end}]")]
    Domain { s: f64, s_end: f64 },

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("degenerate time segment {index}: both endpoint speeds are zero")]
    DegenerateSegment { index: usize },

    #[error("primitive library is empty")]
    EmptyLibrary,

    #[error("bad file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("library hash mismatch: relations were built for {expected}, library is {found}")]
    HashMismatch { expected: String, found: String },

    #[error("could not place {requested} obstacles (placed {placed})")]
    MapGeneration { requested: usize, placed: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
