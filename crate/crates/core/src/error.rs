use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    /// A caller broke an API contract (non-scalar loss, missing gradient, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A class index fell outside `1..=M`.
    #[error("dispatch error: class {class} at pixel ({y}, {x}) outside 1..={num_classes}")]
    Dispatch {
        class: u32,
        y: usize,
        x: usize,
        num_classes: usize,
    },

    #[error("image error in {path}: {kind}")]
    Image { path: PathBuf, kind: ImageErrorKind },

    #[error("model file error in section `{section}`: {message}")]
    Model { section: String, message: String },

    #[error("architecture mismatch: expected {expected}, file holds {found}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("class count mismatch: classifier yields {classifier} classes, filter bank holds {bank}")]
    ClassCount { classifier: usize, bank: usize },

    #[error("no images found in {0}")]
    NoImages(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Distinct failure modes when decoding an image file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageErrorKind {
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("png decode failed: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
