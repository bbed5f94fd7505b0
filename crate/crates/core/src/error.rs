use thiserror::Error;

/// Configuration and input errors raised by the library.
///
/// The per-sample update paths are total; errors only surface when building
/// estimators, controllers and streams, or when reading input data.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("probability must lie strictly between 0 and 1, got {0}")]
    InvalidProbability(f64),

    #[error("step size must be finite and nonnegative, got {0}")]
    InvalidStepSize(f64),

    #[error("DUMIQE requires lambda * max(q, 1 - q) < 1, got lambda = {lambda}, q = {q}")]
    StepTooLarge { lambda: f64, q: f64 },

    #[error("DUMIQE requires a positive initial estimate, got {0}")]
    NonPositiveEstimate(f64),

    #[error("initial estimate must be finite, got {0}")]
    NonFiniteEstimate(f64),

    #[error("smoothing weight `{name}` must lie in (0, 1], got {value}")]
    InvalidWeight { name: &'static str, value: f64 },

    #[error("rule-of-thumb horizon M must be at least 1")]
    ZeroHorizon,

    #[error("auxiliary probability must differ from the target probability ({0})")]
    DegenerateAuxiliary(f64),

    #[error("invalid lambda grid: {0}")]
    InvalidGrid(String),

    #[error("invalid controller configuration: {0}")]
    InvalidController(String),

    #[error("invalid stream specification: {0}")]
    InvalidStream(String),

    #[error("degrees of freedom must be positive and finite, got {0}")]
    InvalidDegreesOfFreedom(f64),

    #[error("timestamps must be nondecreasing: {prev} followed by {next} at line {line}")]
    DecreasingTimestamp { prev: f64, next: f64, line: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("length mismatch: {estimates} estimates vs {truths} truths")]
    LengthMismatch { estimates: usize, truths: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_probability(p: f64) -> Result<f64> {
    if p > 0.0 && p < 1.0 {
        Ok(p)
    } else {
        Err(Error::InvalidProbability(p))
    }
}
