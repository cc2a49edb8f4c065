use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed {what} at line {line}: {reason}")]
    Format {
        what: &'static str,
        line: usize,
        reason: String,
    },

    #[error("unsupported {what} format version {found}")]
    Version { what: &'static str, found: u32 },

    #[error("non-finite input")]
    NonFinite,

    #[error("input length {found} does not match model input width {expected}")]
    InputWidth { expected: usize, found: usize },

    #[error("no training samples")]
    NoSamples,

    #[error("no evaluation labels")]
    NoLabels,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
