use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is out of its valid range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A scenario failed validation; `field` names the offending field.
    #[error("invalid scenario field `{field}`: {message}")]
    Scenario { field: String, message: String },

    #[error("unknown tag {tag} (line {line})")]
    UnknownTag { tag: String, line: u64 },

    #[error("collar map: {0}")]
    CollarMap(String),

    #[error("malformed input {path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("{0} not found: {1}")]
    NotFound(&'static str, PathBuf),

    #[error("no data")]
    NoData,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoData => 3,
            _ => 2,
        }
    }
}
