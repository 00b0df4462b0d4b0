use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The file is not a bundle, or the header is not well-formed.
    #[error("format error: {0}")]
    Format(String),

    /// The file claims a layout it does not actually have.
    #[error("corrupt bundle: {0}")]
    Corruption(String),

    /// A value violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A configuration parameter is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Two inputs that must agree in size do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A point that the layout transform does not cover.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures of the environment (missing files, unreadable
    /// directories) rather than of the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Image(image::ImageError::IoError(_)) => true,
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
