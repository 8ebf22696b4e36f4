use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("corrupt frame {frame}: {reason}")]
    CorruptFrame { frame: String, reason: String },

    #[error("invalid split list: {0}")]
    InvalidSplit(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("manifest does not match bank: {0}")]
    ManifestMismatch(String),

    #[error("invalid grouping scheme: {0}")]
    InvalidScheme(String),

    #[error("group index {index} out of range for a scheme with {groups} groups")]
    InvalidGroup { index: usize, groups: usize },

    #[error("invalid tensor file: {0}")]
    InvalidTensor(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("no occluder candidates for frame {0}")]
    NoCandidates(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Maps an I/O error on `path` to [`Error::NotFound`] when the file is missing.
    pub(crate) fn io_at(path: &std::path::Path, err: std::io::Error) -> Self {
        if err.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.to_path_buf())
        } else {
            Error::Io(err)
        }
    }
}
