use thiserror::Error;

/// Failure modes shared by every numerical routine in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{what} did not converge (estimate {estimate:e}, achieved error {error:e})")]
    NonConvergence {
        what: &'static str,
        estimate: f64,
        error: f64,
    },

    #[error("fixed-point iteration diverged: contraction ratio {ratio:.4} >= 1 for {streak} consecutive sweeps")]
    Divergence { ratio: f64, streak: usize },

    #[error("sample is empty: {0}")]
    EmptySample(String),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("probe is ambiguous: {0}")]
    Ambiguous(String),
}

pub type Result<T> = std::result::Result<T, Error>;
