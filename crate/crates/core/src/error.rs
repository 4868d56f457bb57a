use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("environment fault: {0}")]
    EnvironmentFault(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("non-finite accumulation at step {step}")]
    NonFinite { step: u64 },

    #[error("parameter divergence at step {step}: |theta|_inf = {norm}")]
    Divergence { step: u64, norm: f64 },

    #[error("line search failed to bracket after {evaluations} evaluations (s- = {lower}, s+ = {upper})")]
    BracketFailure {
        lower: f64,
        upper: f64,
        evaluations: usize,
    },

    #[error("inconclusive beta probe: {0}")]
    InconclusiveProbe(String),

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("optimizer iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }
}

pub(crate) fn ensure_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dims(context, expected, got))
    }
}
