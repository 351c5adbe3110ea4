use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error type. Variants map to the failure modes of the
/// individual pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("image decode failed: {0}")]
    Decode(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("box degenerate after clamping (width or height < 1 px)")]
    DegenerateBox,

    #[error("crop rectangle does not intersect the image")]
    EmptyCrop,

    #[error("inference backend failed: {0}")]
    Backend(String),

    #[error("backend output shape mismatch: expected {expected}, got {got:?}")]
    ShapeMismatch { expected: String, got: Vec<usize> },

    #[error("missing label for crop `{0}`")]
    MissingLabel(String),

    #[error("duplicate stem `{0}` in manifest")]
    DuplicateStem(String),

    #[error("subject `{subject}` appears in splits {splits:?}")]
    SubjectLeak { subject: String, splits: Vec<String> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
