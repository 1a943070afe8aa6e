use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("no feasible configuration found after {attempts} attempts")]
    InfeasibleSpace { attempts: usize },

    #[error("space has {size} points, above the enumeration limit of {limit}")]
    TooLargeToEnumerate { size: String, limit: u64 },

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("sample pool exhausted: {0}")]
    PoolExhausted(String),

    #[error("measurement failed: {0}")]
    Measurement(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
