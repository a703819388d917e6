use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A reference to a node, path, slice or demand vector that does not exist,
    /// or a shape mismatch between vectors that must agree.
    #[error("structural error: {0}")]
    Structural(String),

    /// A function evaluated outside its domain (e.g. marginal utility at z <= 0).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("demand is undefined: utilization vector is all zero")]
    UndefinedDemand,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}
