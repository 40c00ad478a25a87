use thiserror::Error;

/// Errors raised by the adaptation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FclError {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unknown class index {0}")]
    UnknownClass(usize),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("invalid configuration `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("image size {got_h}x{got_w} does not match encoder input {want_h}x{want_w}")]
    Resolution {
        want_h: usize,
        want_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl FclError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        FclError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: usize, got: usize) -> Self {
        FclError::ShapeMismatch { context, expected, got }
    }
}

impl From<std::io::Error> for FclError {
    fn from(e: std::io::Error) -> Self {
        FclError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FclError>;
