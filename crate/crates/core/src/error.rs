use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quantile {0} lies outside [0, 1]")]
    Domain(f64),

    #[error("invalid quantile function: {0}")]
    InvalidQuantileFunction(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid mechanism spec: {0}")]
    InvalidSpec(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("scenario is not symmetric: {0}")]
    AsymmetricScenario(String),

    #[error("internal inconsistency: {0}")]
    Inconsistency(String),

    #[error("no convergence after {iterations} iterations (max residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("cannot bracket {what}: f({lo}) = {f_lo:.6e}, f({hi}) = {f_hi:.6e}, target {target:.6e}")]
    RootBracketFailure {
        what: String,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
        target: f64,
    },

    #[error("certification failed: discrepancy {discrepancy:.3e} exceeds {tolerance:.1e}")]
    CertificationFailed { discrepancy: f64, tolerance: f64 },
}
