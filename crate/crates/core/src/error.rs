//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operand width/shape disagrees with what the operation requires.
    DimMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    /// Class label outside the valid range.
    LabelOutOfRange { label: usize, n_classes: usize },
    /// Empty input where at least one element is required.
    EmptyInput { what: &'static str },
    /// A value that must be finite was NaN or infinite.
    NonFinite { what: &'static str },
    /// Full-tensor oracle would exceed its element budget.
    OracleTooLarge { elements: usize, limit: usize },
    /// Features supplied do not line up with the modality mask.
    MaskMismatch { detail: String },
    /// Prediction or fusion was asked for with no modality available.
    NoModalities,
    /// Malformed record; `line` is 1-based within the source document (0 = unknown).
    Parse { line: usize, detail: String },
    /// Structurally valid input violating a dataset invariant.
    Data { detail: String },
    /// Rejected configuration value.
    Config { detail: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::DimMismatch {
                what,
                expected,
                actual,
            } => write!(f, "{what}: expected width {expected}, got {actual}"),
            CoreError::LabelOutOfRange { label, n_classes } => {
                write!(f, "label {label} out of range (must be < {n_classes})")
            }
            CoreError::EmptyInput { what } => write!(f, "{what}: empty input"),
            CoreError::NonFinite { what } => write!(f, "{what}: non-finite value"),
            CoreError::OracleTooLarge { elements, limit } => write!(
                f,
                "full fusion tensor would hold {elements} elements (limit {limit})"
            ),
            CoreError::MaskMismatch { detail } => write!(f, "mask/feature mismatch: {detail}"),
            CoreError::NoModalities => write!(f, "no modality available"),
            CoreError::Parse { line, detail } => {
                if *line > 0 {
                    write!(f, "line {line}: {detail}")
                } else {
                    write!(f, "{detail}")
                }
            }
            CoreError::Data { detail } => write!(f, "invalid data: {detail}"),
            CoreError::Config { detail } => write!(f, "invalid config: {detail}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
