use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt stream in {section} at byte {offset}: {detail}")]
    Corrupt {
        section: &'static str,
        offset: usize,
        detail: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("curves have no overlapping interval")]
    NoOverlap,

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
