use thiserror::Error;

/// Errors raised across the augmentation, controller and analyzer modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaError {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("required {axis} padding {needed} exceeds reflectable extent {limit}")]
    Padding { axis: char, needed: i64, limit: i64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate heuristic: {0}")]
    Degenerate(String),

    #[error("specification error: {0}")]
    Specification(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, AdaError>;
