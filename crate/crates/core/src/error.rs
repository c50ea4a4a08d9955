use thiserror::Error;

/// Errors raised by model evaluation, training, reduction and control routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("at least {required} samples are needed, got {actual}")]
    TooFewSamples { required: usize, actual: usize },

    #[error("invalid permutation index: {0}")]
    Permutation(String),

    #[error("state variances are not ordered (state {index} has {next} > {prev}); run the ordering repair before reducing")]
    Unordered { index: usize, prev: f64, next: f64 },

    #[error("no significant states above threshold {delta}")]
    EmptyReduction { delta: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no steady state found for target {target:?}")]
    InfeasibleTarget { target: Vec<f64> },

    #[error("malformed model document: {0}")]
    Document(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }
}
