use thiserror::Error;

/// Errors surfaced by solvers, projections, and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    /// An inner iterative solve stalled; carries the last residual so
    /// callers can decide whether to fall back.
    #[error("{what} did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        residual: f64,
        iterations: usize,
    },

    /// A Lagrange multiplier on the active set is (numerically) zero, so the
    /// problem sits outside the strict-complementarity regime every
    /// covariance prediction relies on.
    #[error("strict complementarity violated: multiplier {value:.3e} on active constraint {index}")]
    StrictComplementarity { index: usize, value: f64 },

    #[error("constraint system is infeasible")]
    Infeasible,

    #[error("trace ensemble has mismatched horizons: {0} vs {1}")]
    MismatchedHorizons(usize, usize),

    #[error("need at least {need} traces, got {got}")]
    NotEnoughTraces { got: usize, need: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
