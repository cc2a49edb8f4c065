use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("infeasible world: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("waypoint ({0}, {1}) lies outside the world")]
    OutsideWorld(f64, f64),

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error("malformed episode log at line {line}: {reason}")]
    Format { line: usize, reason: String },
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
