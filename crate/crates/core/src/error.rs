use std::path::PathBuf;

/// Errors produced by the scheduler and simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("instance too large for exhaustive search: {vars} binary variables (limit {limit})")]
    TooLarge { vars: usize, limit: usize },

    #[error("{}: invalid JSON: {err}", path.display())]
    Json {
        path: PathBuf,
        err: serde_json::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
