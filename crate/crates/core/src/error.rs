use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("need at least 2 demonstrations, found {found}")]
    InsufficientDemos { found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid synthetic task: {0}")]
    Spec(String),

    #[error("no monotone alignment within slope bounds [{min_slope}, {max_slope}] for {reference_len} -> {target_len} samples")]
    Infeasible {
        min_slope: f64,
        max_slope: f64,
        reference_len: usize,
        target_len: usize,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("operator input {0} outside [-1, 1]")]
    Input(f64),

    #[error("trace error: {0}")]
    Trace(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("execution diverged: global time {elapsed:.3}s exceeds {limit:.3}s")]
    Divergence { elapsed: f64, limit: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("iteration {iteration} of trial {trial}: {source}")]
    Iteration {
        trial: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
