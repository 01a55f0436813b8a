use thiserror::Error;

/// Errors raised by estimation, inference and data ingestion.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmlmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("non-monotone fit: scale estimate {sigma} is not positive")]
    NonMonotoneFit { sigma: f64 },

    #[error("inference unstable: {failures} of {replicates} bootstrap refits failed")]
    InferenceUnstable { failures: usize, replicates: usize },

    #[error("tuning failed: {0}")]
    TuningFailed(String),

    #[error("learning share undefined: total effect is zero")]
    UndefinedShare,

    #[error("degenerate prior: {0}")]
    DegeneratePrior(String),

    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl GmlmError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GmlmError::InvalidArgument(msg.into())
    }

    pub(crate) fn data(line: usize, msg: impl Into<String>) -> Self {
        GmlmError::Data {
            line,
            message: msg.into(),
        }
    }

    /// True for failures of the numerical pipeline, as opposed to bad
    /// arguments or malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GmlmError::DegenerateDesign(_)
                | GmlmError::NonMonotoneFit { .. }
                | GmlmError::InferenceUnstable { .. }
                | GmlmError::TuningFailed(_)
                | GmlmError::UndefinedShare
                | GmlmError::DegeneratePrior(_)
        )
    }
}

impl From<std::io::Error> for GmlmError {
    fn from(e: std::io::Error) -> Self {
        GmlmError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GmlmError>;
