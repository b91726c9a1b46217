use std::io;

/// Errors shared by the host's subsystems.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid function unit: {0}")]
    InvalidUnit(String),

    #[error("function not found: {tenant}/{name}")]
    NotFound { tenant: String, name: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
