//! Error type shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file; `offset` is a byte offset into the file when known.
    #[error("parse error in {path}: {message}{}", offset.map(|o| format!(" (byte {o})")).unwrap_or_default())]
    Parse {
        path: String,
        message: String,
        offset: Option<usize>,
    },

    /// Input violated a type invariant (non-orthonormal rotation, bad dims, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Mismatched array/list dimensions between related inputs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Point projects at or behind the camera plane.
    #[error("point is behind the camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },

    /// Grid corners span no usable depth range in this view.
    #[error("degenerate grid: depth range {range:.3e} m below 1e-9")]
    DegenerateGrid { range: f64 },

    /// No voxel reached the carving threshold; there is no isosurface.
    #[error("empty hull: no voxel reaches threshold {threshold}")]
    EmptyHull { threshold: u32 },

    /// Predictor parameters do not match the requested stage/grid dimensions.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Missing or malformed configuration key.
    #[error("missing config key `{0}`")]
    MissingKey(String),

    #[error("config key `{key}`: {message}")]
    BadKey { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
            offset: None,
        }
    }

    pub fn parse_at(path: impl Into<String>, message: impl Into<String>, offset: usize) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
            offset: Some(offset),
        }
    }
}
