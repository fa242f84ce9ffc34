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
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid sketch: {0}")]
    InvalidSketch(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("duplicate table id `{0}`")]
    DuplicateTable(String),
    #[error("unknown table id `{0}`")]
    MissingTable(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input of {needed} tokens does not fit budget {budget}")]
    Budget { needed: usize, budget: usize },
    #[error("gold value `{value}` cannot be aligned to the question")]
    Unalignable { value: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
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
