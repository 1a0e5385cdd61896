use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("malformed {format} data: {msg}")]
    Format { format: &'static str, msg: String },

    #[error("non-finite loss at iteration {iteration} (loss = {loss})")]
    NonFinite { iteration: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
