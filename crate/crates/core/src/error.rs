//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("index error: {0}")]
    Index(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("field error: {0}")]
    Field(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (configs, file formats,
    /// labels) as opposed to runtime failures. The CLI maps these to exit 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Format(_)
                | Error::Parse { .. }
                | Error::Label(_)
                | Error::Field(_)
                | Error::Length(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
