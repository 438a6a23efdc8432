use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("probability at index {index} is not positive ({value})")]
    NonPositiveProbability { index: usize, value: f64 },

    #[error("probabilities sum to {mass}, expected 1")]
    MassNotOne { mass: f64 },

    #[error("models are not aligned: {0}")]
    Misaligned(String),

    #[error("Poisson rate must be nonnegative, got {0}")]
    NegativeRate(f64),

    #[error("parameter constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("distance bound eps must be positive, got {0}")]
    EpsOutOfRange(f64),

    #[error("optimizer returned a nonnegative exponent ({0}); a negative optimum always exists")]
    NonNegativeOptimum(f64),

    #[error("unknown baseline tester `{0}` (expected chisq, tv, collisions or singletons)")]
    UnknownBaseline(String),

    #[error("no coin realization landed in the conditioning window after {attempts} attempts")]
    ConditioningTooRare { attempts: usize },

    #[error("no coin realization has distance inside [{eps}, {eps_hi}]")]
    EmptyConditioning { eps: f64, eps_hi: f64 },

    #[error("certificate {certificate} does not match exponent {delta_log} (|diff| = {diff:e})")]
    CertificateMismatch {
        certificate: f64,
        delta_log: f64,
        diff: f64,
    },

    #[error("exact error bracket width {width:e} exceeds slack budget {budget:e}")]
    SlackBudgetExceeded { width: f64, budget: f64 },

    #[error("instance too large for enumeration: {count} outcomes (limit {limit})")]
    InstanceTooLarge { count: f64, limit: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    ///
    /// 2 is a validation error, 3 a failed verification, 4 a numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::CertificateMismatch { .. } => 3,
            Error::NoConvergence { .. }
            | Error::NonNegativeOptimum(_)
            | Error::ConditioningTooRare { .. }
            | Error::EmptyConditioning { .. }
            | Error::SlackBudgetExceeded { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
