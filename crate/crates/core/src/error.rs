use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to parse configuration: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:.3e}, objective {objective:.6e})")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        objective: f64,
    },

    #[error("strong convexity violated: gamma1 + gamma2 - gamma2 * R = {margin:.3e} <= 0")]
    NotStronglyConvex { margin: f64 },

    #[error("coupling matrix C(eta) is not positive definite")]
    NotPositiveDefinite,

    #[error("inner maximization over eta is unbounded: {0}")]
    Unbounded(String),

    #[error("no sign change of the error gap on [0, 1]: gap(R=0) = {gap_at_zero:.3e}, gap(R=1) = {gap_at_one:.3e}")]
    NoBracket { gap_at_zero: f64, gap_at_one: f64 },

    #[error("linear algebra failure: {0}")]
    Linalg(String),
}
