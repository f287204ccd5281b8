use thiserror::Error;

/// Errors produced by the core operators.
///
/// Variant names are stable: the CLI and any language bindings surface them
/// verbatim.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("segment {index} ({label}) has no tokens")]
    EmptySegment { index: usize, label: String },

    #[error("a prompt needs an identity segment and at least one frame, got {0} segment(s)")]
    MissingFrames(usize),

    #[error("duplicate segment label {0:?}")]
    DuplicateLabel(String),

    #[error("frame index {index} out of range 1..={frames}")]
    InvalidFrame { index: usize, frames: usize },

    #[error("token id {id} at position {position} outside vocabulary of size {vocab_size}")]
    InvalidToken {
        id: u32,
        position: usize,
        vocab_size: usize,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("mode {0} rescales token spans and needs a frame partition")]
    MissingSpans(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Taxonomy name of the variant, e.g. `"ShapeMismatch"`.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "InvalidMatrix",
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptySegment { .. } => "EmptySegment",
            Error::MissingFrames(_) => "MissingFrames",
            Error::DuplicateLabel(_) => "DuplicateLabel",
            Error::InvalidFrame { .. } => "InvalidFrame",
            Error::InvalidToken { .. } => "InvalidToken",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::MissingSpans(_) => "MissingSpans",
            Error::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
