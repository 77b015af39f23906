use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record `{content}`")]
    Malformed { line: usize, content: String },

    #[error("line {line}: negative count")]
    NegativeCount { line: usize },

    #[error("line {line}: duplicate time index {index}")]
    DuplicateIndex { line: usize, index: i64 },

    #[error("missing time index {expected} (series must be uniformly spaced)")]
    MissingIndex { expected: i64 },

    #[error("series too short: need at least {needed} records, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("wrong cadence: expected {expected}, got {got}")]
    WrongCadence { expected: &'static str, got: &'static str },

    #[error("invalid filter window {window}: {reason}")]
    InvalidWindow { window: usize, reason: &'static str },

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("no local maxima in spectrum")]
    NoLocalMaxima,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("frequencies have no common period representable in 64-bit rationals")]
    NoCommonPeriod,

    #[error("newton iteration did not converge at t = {t} after {iterations} iterations")]
    NewtonFailure { t: f64, iterations: usize },

    #[error("inconsistent scheme: {0}")]
    InconsistentScheme(String),

    #[error("quadratic subproblem infeasible")]
    QpInfeasible,

    #[error("quadratic subproblem exceeded {0} active-set changes")]
    QpMaxCycles(usize),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("singular linear system")]
    Singular,

    #[error("all {0} multi-start runs failed to converge")]
    AllStartsFailed(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("orbit did not close: residual {residual:e} after {attempts} attempts")]
    NoConvergenceToOrbit { residual: f64, attempts: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable code used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Malformed { .. } => "malformed",
            Error::NegativeCount { .. } => "negative-count",
            Error::DuplicateIndex { .. } => "duplicate-index",
            Error::MissingIndex { .. } => "missing-index",
            Error::TooShort { .. } => "too-short",
            Error::WrongCadence { .. } => "wrong-cadence",
            Error::InvalidWindow { .. } => "invalid-window",
            Error::OutOfRange { .. } => "out-of-range",
            Error::NoLocalMaxima => "no-local-maxima",
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::NoCommonPeriod => "no-common-period",
            Error::NewtonFailure { .. } => "newton-failure",
            Error::InconsistentScheme(_) => "inconsistent-scheme",
            Error::QpInfeasible => "qp-infeasible",
            Error::QpMaxCycles(_) => "qp-max-cycles",
            Error::NotPositiveDefinite => "not-positive-definite",
            Error::Singular => "singular",
            Error::AllStartsFailed(_) => "all-starts-failed",
            Error::Precondition(_) => "precondition",
            Error::NoConvergenceToOrbit { .. } => "no-orbit",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
        }
    }

    /// Whether the failure is numerical (as opposed to bad input or usage).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NewtonFailure { .. }
                | Error::QpInfeasible
                | Error::QpMaxCycles(_)
                | Error::NotPositiveDefinite
                | Error::Singular
                | Error::AllStartsFailed(_)
                | Error::NoConvergenceToOrbit { .. }
                | Error::NoLocalMaxima
        )
    }
}
