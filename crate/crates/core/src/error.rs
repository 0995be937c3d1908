use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported bitwidth {0}")]
    UnsupportedBitwidth(u32),

    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("epsilon {epsilon} collapses the {bitwidth}-bit codebook in single precision")]
    DegenerateCodebook { bitwidth: u32, epsilon: f64 },

    #[error("value {0} outside [0, 1]")]
    OutOfUnitRange(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("budget infeasible: payload budget {payload_budget} bits/coordinate does not exceed minimum width {min_width}")]
    BudgetInfeasible { payload_budget: f64, min_width: u32 },

    #[error("super-group scale {0} exceeds the binary16 range")]
    ScaleOverflow(f32),

    #[error("malformed buffer: {0}")]
    Malformed(String),

    #[error("width mismatch between header and expected allocation in chunk {chunk}")]
    WidthMismatch { chunk: u32 },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
