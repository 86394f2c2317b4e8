use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// A manifest that parses but does not describe a usable artifact.
    #[error("schema violation in `{entry}`: {detail}")]
    Schema { entry: String, detail: String },

    #[error("missing tensor file for `{tensor}`: {path}")]
    MissingTensor { tensor: String, path: PathBuf },

    #[error("byte count mismatch for `{tensor}`: expected {expected}, found {actual}")]
    ByteCountMismatch { tensor: String, expected: u64, actual: u64 },

    /// A named bundle invariant failed; `name` is stable and matchable.
    #[error("invariant `{name}` violated: {detail}")]
    Invariant { name: &'static str, detail: String },

    #[error("non-finite value in `{tensor}` at flat index {index}")]
    NonFinite { tensor: String, index: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("null-projected gradient vanishes (norm {norm:e})")]
    VanishingNullGradient { norm: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("invalid steering spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate split: class {class} has no training samples")]
    DegenerateSplit { class: usize },

    #[error("degenerate correlation: {0}")]
    DegenerateCorrelation(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(entry: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Schema {
            entry: entry.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn invariant(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Invariant {
            name,
            detail: detail.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad inputs or IO).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroNorm(_)
                | Error::Singular(_)
                | Error::VanishingNullGradient { .. }
                | Error::Calibration(_)
                | Error::DegenerateCorrelation(_)
        )
    }
}
