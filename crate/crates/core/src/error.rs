use thiserror::Error;

/// Errors raised by the integrators, solvers and problem definitions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Invalid method or solver configuration (e.g. `k < s`).
    #[error("configuration error: {0}")]
    Config(String),

    /// A benchmark was requested with parameters outside its valid set.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The vector field (or an invariant) was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// An iteration matrix could not be factored. Usually cured by a smaller step.
    #[error("singular iteration matrix ({0}); try reducing the stepsize")]
    Singular(String),

    /// `φ̂₀ᵀφ̂₀` is numerically singular: the enforced invariants are not
    /// independent at the current point.
    #[error("constraint degeneracy: {0}")]
    ConstraintDegeneracy(String),

    /// NaN or overflow during a nonlinear iteration.
    #[error("iteration diverged after {iterations} iterations")]
    Divergence { iterations: usize },

    /// A nonlinear solve did not reach its tolerance inside a multi-step run.
    #[error("solver did not converge at t = {t} with h = {h} (residual {residual:e})")]
    NonConvergence { t: f64, h: f64, residual: f64 },

    /// The adaptive controller requested a step below `h_min`.
    #[error("stepsize underflow at t = {t}: h = {h:e} below h_min = {h_min:e}")]
    StepSizeUnderflow { t: f64, h: f64, h_min: f64 },

    /// A measurement could not be taken (e.g. every sample below the roundoff floor).
    #[error("measurement failed: {0}")]
    Measurement(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
