use std::path::PathBuf;

use thiserror::Error;

use crate::ontology::Level;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown ontology level `{0}` (expected LEVEL1, LEVEL1_5 or LEVEL2)")]
    UnknownLevel(String),

    #[error("{from} is not strictly finer than {to}")]
    NotCoarser { from: Level, to: Level },

    #[error("level mismatch: expected {expected:?}, found {found:?}")]
    LevelMismatch { expected: Level, found: Level },

    #[error("label not a distribution: {0}")]
    NotADistribution(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid ontology file: {0}")]
    Ontology(String),

    #[error("manifest line {line}: field `{field}`: {message}")]
    Manifest {
        line: usize,
        field: String,
        message: String,
    },

    #[error("missing rasters for patches: {}", .0.join(", "))]
    MissingRasters(Vec<String>),

    #[error("raster {path}: {message}")]
    RasterFormat { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "raster of {height}x{width} px is not divisible into a {grid_n}x{grid_n} grid; \
         pad to {pad_h}x{pad_w} or enable resampling"
    )]
    NotDivisible {
        height: usize,
        width: usize,
        grid_n: usize,
        pad_h: usize,
        pad_w: usize,
    },

    #[error("patch {patch_id}: missing month {month}")]
    MissingMonth { patch_id: String, month: u8 },

    #[error("invalid config: `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{0}")]
    Incompatible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("png encoding failed: {0}")]
    Png(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
