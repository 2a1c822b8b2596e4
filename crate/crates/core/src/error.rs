use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid frailty specification: {0}")]
    Frailty(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite likelihood at initialization (observation {index}): {detail}")]
    NonFiniteInit { index: usize, detail: String },
    #[error("root bracketing failed for u = {0}")]
    Bracket(f64),
    #[error("too few distinct values: need {needed}, found {found}")]
    TooFewDistinct { needed: usize, found: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
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
