use std::path::PathBuf;

use crate::types::{CategoryId, ImageId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid bounding box [{x}, {y}, {w}, {h}]: width and height must be finite and > 0")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },

    #[error("invalid image dimensions {width}x{height}: both must be > 0")]
    InvalidDims { width: u32, height: u32 },

    #[error("confidence {0} is outside [0, 1]")]
    InvalidConfidence(f64),

    #[error("detection of class {found} passed to heatmap for class {expected}")]
    ClassMismatch {
        expected: CategoryId,
        found: CategoryId,
    },

    #[error("no image dimensions known for image_id {0}")]
    MissingImageDims(ImageId),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("reports are not comparable: {0}")]
    ReportMismatch(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("{}: malformed JSON at byte {offset}: {message}", path.display())]
    Json {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{}: {} invalid record(s):\n  {}", path.display(), problems.len(), problems.join("\n  "))]
    Validation {
        path: PathBuf,
        problems: Vec<String>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[cfg(feature = "render")]
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            #[cfg(feature = "render")]
            Error::Image { source, .. } => matches!(source, image::ImageError::IoError(_)),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
