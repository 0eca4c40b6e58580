use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutogradError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutogradError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("batch normalization in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),
}

impl AutogradError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AutogradError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        AutogradError::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}
