use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("noise spec rejected ({kind}): {reason}")]
    Rejected { kind: &'static str, reason: String },

    #[error("operation not supported for {kind} noise: {what}")]
    Unsupported {
        kind: &'static str,
        what: &'static str,
    },

    #[error("invalid parameter `{name}` = {value}: {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("diffusion constant must be positive, got {0}")]
    DNonpositive(f64),

    #[error("non-positive value {value} at t = {t} inside the fit window")]
    NonpositiveValue { t: f64, value: f64 },

    #[error("fit window holds {found} nodes, at least {required} required")]
    WindowTooShort { found: usize, required: usize },

    #[error("correlation window {window} exceeds half the horizon {horizon}")]
    WindowTooLong { window: f64, horizon: f64 },

    #[error("only {found} nonzero samples, tail needs {required}")]
    InsufficientTail { found: usize, required: usize },

    #[error("fitted slopes do not change sign over the p grid")]
    NoSignChange,

    #[error("ensembles share master seed {0}; they must be independent")]
    SameSeed(u64),

    #[error("order p = {p} is not below the critical exponent {beta_c}; no stationary moment")]
    Truncation { p: f64, beta_c: f64 },

    #[error(
        "test function class {gamma_class} inconsistent with mode (critical exponent {beta_c})"
    )]
    ClassMismatch { gamma_class: f64, beta_c: f64 },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("i/o failure: {0}")]
    Io(String),

    #[error("malformed ensemble file: {0}")]
    Format(String),
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Rejected { .. } => "REJECTED",
            Error::Unsupported { .. } => "UNSUPPORTED",
            Error::InvalidParameter { .. } | Error::EmptyInput | Error::LengthMismatch { .. } => {
                "INVALID_INPUT"
            }
            Error::DNonpositive(_) => "D_NONPOSITIVE",
            Error::NonpositiveValue { .. }
            | Error::WindowTooShort { .. }
            | Error::WindowTooLong { .. } => "FIT_FAILED",
            Error::InsufficientTail { .. } => "INSUFFICIENT_TAIL",
            Error::NoSignChange => "NO_SIGN_CHANGE",
            Error::SameSeed(_) => "SAME_SEED",
            Error::Truncation { .. } => "TRUNCATION",
            Error::ClassMismatch { .. } => "CLASS_MISMATCH",
            Error::ConfigInvalid(_) => "CONFIG_INVALID",
            Error::Io(_) => "IO_FAILURE",
            Error::Format(_) => "FORMAT",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::ConfigInvalid(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            constraint: "must be positive and finite",
        })
    }
}
