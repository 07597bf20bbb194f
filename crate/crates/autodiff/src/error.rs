use thiserror::Error;

use crate::Shape;

pub type Result<T> = std::result::Result<T, AdError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch { op: &'static str, lhs: Shape, rhs: Shape },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("backward root must be a scalar, got {0}")]
    NonScalarRoot(Shape),
}
