use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("coordinate ({x}, {y}) outside feature map of size {width}x{height}")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("box has zero area")]
    DegenerateBox,

    #[error("innovation covariance is not positive definite")]
    SingularCovariance,

    #[error("brute-force oracle supports at most {max} rows/cols, got {got}")]
    OracleTooLarge { max: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("gradient tape already consumed")]
    TapeConsumed,

    #[error("gradient tape does not match the parameters it was recorded with")]
    TapeMismatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("metric undefined: {0}")]
    Undefined(&'static str),

    #[error("frame mismatch: ground truth frame {gt}, hypothesis frame {hyp}")]
    FrameMismatch { gt: u32, hyp: u32 },
}

pub type Result<T> = std::result::Result<T, Error>;
