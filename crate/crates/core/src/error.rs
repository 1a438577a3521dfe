use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure modes of the core pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Inputs disagree in shape or violate a structural precondition.
    Structure(String),
    /// A parameter is out of its admissible range.
    Config(String),
    /// Corner detection left one of the two corner sets empty.
    Detection(String),
    /// Least-squares fit on a degenerate (constant) regressor.
    Fit(String),
    /// No vascular corner has a correlated non-vascular partner.
    TrainingFailure(String),
    /// No usable live track for a frame.
    PredictionFailure(String),
    /// No valid anchor to extend sparse motion to the mask.
    WarpFailure,
    /// Scoring precondition (non-empty masks) not met.
    Evaluation(String),
    /// `K + sigma_n^2 I` could not be factorized even with jitter.
    NotPositiveDefinite { c: f64, eta: f64 },
    /// Every hyperparameter start failed.
    Optimization(String),
    /// Malformed serialized model.
    Decode(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Structure(m) => write!(f, "structural error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Detection(m) => write!(f, "detection error: {m}"),
            Error::Fit(m) => write!(f, "fit error: {m}"),
            Error::TrainingFailure(m) => write!(f, "training failure: {m}"),
            Error::PredictionFailure(m) => write!(f, "prediction failure: {m}"),
            Error::WarpFailure => f.write_str("warp failure: no valid anchor"),
            Error::Evaluation(m) => write!(f, "evaluation error: {m}"),
            Error::NotPositiveDefinite { c, eta } => {
                write!(f, "kernel matrix not positive definite at c={c}, eta={eta}")
            }
            Error::Optimization(m) => write!(f, "optimization error: {m}"),
            Error::Decode(m) => write!(f, "decode error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
