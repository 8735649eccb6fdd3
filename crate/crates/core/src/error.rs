use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("non-finite {field}: {value}")]
    NonFinite { field: &'static str, value: f64 },
    #[error("non-positive {field}: {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("corner {axis}2 ({hi}) must exceed {axis}1 ({lo})")]
    InvertedCorners { axis: char, lo: f64, hi: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    Box(#[from] BoxError),

    #[error("focusing constant n must be finite and > 0, got {0}")]
    FocusingConstant(f64),

    #[error("unknown loss kind `{0}` (expected one of iou, giou, diou, ciou, eiou, niou, neiou)")]
    UnknownKind(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("perturbation would make {field} non-positive ({value} - {step})")]
    Perturbation {
        field: &'static str,
        value: f64,
        step: f64,
    },

    #[error("column `{0}` not found in table")]
    MissingColumn(String),

    #[error("insufficient data for a polyline: {0}")]
    InsufficientData(String),

    #[error("cannot parse `{value}` in column `{column}` as a number")]
    NotNumeric { column: String, value: String },

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("{}: {source}", path.display())]
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

pub type Result<T> = std::result::Result<T, Error>;
