use thiserror::Error;

/// Errors produced anywhere in the solver, simulator or harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("ill-posed policy: {0}")]
    IllPosedPolicy(String),

    #[error(
        "quadrature did not converge on [{lo}, {hi}] (estimate {estimate:e}, error {error:e})"
    )]
    Quadrature {
        lo: f64,
        hi: f64,
        estimate: f64,
        error: f64,
    },

    #[error("policy density normalisation {mass} outside [1 - 1e-6, 1 + 1e-6]")]
    Normalization { mass: f64 },

    #[error("pole in k2 equation at k2 = {0}")]
    Pole(f64),

    #[error("no admissible root of the k2 equation found in [-{k_max:e}, 0)")]
    NoSolution { k_max: f64 },

    #[error("k2 equation has {} admissible roots: {roots:?}", roots.len())]
    MultipleRoots { roots: Vec<f64> },

    #[error("root index {index} out of range ({count} admissible roots)")]
    RootIndex { index: usize, count: usize },

    #[error("degenerate linear equation for k1 (zero coefficient)")]
    DegenerateK1,

    #[error("dominating bound degenerates at alpha = 0")]
    ZeroGrowthExponent,

    #[error("grid point {index} is ill-posed: {reason}")]
    GridPoint { index: usize, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("path {path} blew up at step {step} (state {state})")]
    BlowUp {
        path: usize,
        step: usize,
        state: f64,
    },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("horizon too short: e^(-rho T) Y_T = {tail:e} >= 0.01 |V(x0)| = {limit:e}")]
    HorizonTooShort { tail: f64, limit: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}
