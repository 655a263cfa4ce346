use alloc::string::String;

/// Errors reported by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("kernel of size {kernel} does not fit a {height}x{width} field")]
    KernelTooLarge {
        kernel: usize,
        height: usize,
        width: usize,
    },
    #[error("size must be odd and at least {min}, got {size}")]
    InvalidOddSize { size: usize, min: usize },
    #[error("grid dimensions must be positive and match the data length")]
    InvalidDimensions,
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("energy audit unavailable: stage filters are not rotation-tied")]
    AuditUnavailable,
    #[error("source of {height}x{width} is smaller than the {crop}x{crop} crop")]
    SourceTooSmall {
        height: usize,
        width: usize,
        crop: usize,
    },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
