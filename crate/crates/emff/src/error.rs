//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inter-satellite distance fell below the far-field validity floor.
    #[error("far-field model invalid: satellites {j} and {k} are {dist:.3} m apart, floor is {d_min:.3} m")]
    FarFieldViolation {
        j: usize,
        k: usize,
        dist: f64,
        d_min: f64,
    },

    /// A model assumption (e.g. formation size vs. orbit radius) was violated.
    #[error("model validity: {0}")]
    ModelValidity(String),

    /// A state or derivative evaluation produced NaN or infinity.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// The reduced mass matrix is numerically singular.
    #[error("ill-conditioned reduced mass matrix (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },

    /// The dipole allocation failed to meet the constraint tolerance.
    #[error("no feasible dipole solution found (best scaled residual {residual:.3e} after {restarts} restarts)")]
    NoFeasibleSolution { residual: f64, restarts: usize },

    /// Bad argument to a library call.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Scenario configuration problems (parse or validation).
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
