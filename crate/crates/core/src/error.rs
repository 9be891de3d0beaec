use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value {value} at index {index} in {what}")]
    NonFinite {
        what: String,
        index: usize,
        value: f32,
    },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("bad magic in {kind} file: expected {expected:?}, found {found:?}")]
    BadMagic {
        kind: &'static str,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported {kind} format version {found} (expected {expected})")]
    BadVersion {
        kind: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {kind} file while reading {section}")]
    Truncated { kind: &'static str, section: String },

    #[error("corrupt sign-pack data: {0}")]
    CorruptSignPack(String),

    #[error("sign-pack sidecar does not match model: {0}")]
    SidecarMismatch(String),

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("invalid alpha {0:?}: expected a non-negative decimal such as 1.03, or \"inf\"")]
    InvalidAlpha(String),

    #[error("alpha schedule has {actual} entries but the model has {expected} layers")]
    ScheduleLength { expected: usize, actual: usize },

    #[error("empty input set")]
    EmptyInputs,

    #[error("invalid alpha grid: {0}")]
    InvalidGrid(String),

    #[error("invalid sweep table: {0}")]
    InvalidTable(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
