use num_complex::Complex64;
use thiserror::Error;

use crate::model::LmtdEnd;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error(
        "cell voltage undefined at current density {current_density} A/m^2: \
         Tafel log argument {argument} is not positive"
    )]
    TafelDomain { current_density: f64, argument: f64 },

    #[error("log-mean temperature difference undefined: {end} difference {difference} K is not positive")]
    LmtdDomain { end: LmtdEnd, difference: f64 },

    #[error("equilibrium search did not converge after {iterations} iterations (residual {residual:e} K/s)")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error(
        "equilibrium requires valve opening {valve:.4}, outside (0, 1); \
         rescale k_valve or choose another operating point"
    )]
    InfeasibleCooling { valve: f64 },

    #[error("operating point is not an equilibrium (residual {residual:e} K/s)")]
    NotEquilibrium { residual: f64 },

    #[error("finite-difference step for {variable} straddles the LMTD domain boundary")]
    LinearizationStep { variable: &'static str },

    #[error("non-finite state at step {step} (t = {time} s)")]
    NonFiniteState { step: usize, time: f64 },

    #[error("simulation aborted at step {step} (t = {time} s): {source}")]
    Aborted { step: usize, time: f64, source: Box<Error> },

    #[error("response has not settled: final-window variation {variation:e} exceeds 0.5% of {steady_state:e}")]
    NotSettled { variation: f64, steady_state: f64 },

    #[error("polynomial system matrix is singular at s = 0 (degenerate equilibrium)")]
    DegeneratePlant,

    #[error("pole-zero cancellation on the imaginary axis at {root}")]
    MarginalCancellation { root: Complex64 },

    #[error("polynomial coefficients span {span:e} after balancing; rescale the time unit")]
    IllConditioned { span: f64 },

    #[error("polynomial has no roots to compute (degree {degree})")]
    DegreeTooLow { degree: usize },

    #[error("pole computation failed for kp={kp}, ki={ki}, kd={kd}: {source}")]
    Gains {
        kp: f64,
        ki: f64,
        kd: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("no stable grid point in {bounds}")]
    EmptyStableSet { bounds: String },

    #[error("no stable grid point settles within the step-response horizon ({bounds})")]
    NoFeasiblePoint { bounds: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for input/configuration problems (as opposed to runtime failures).
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid { .. } | Error::Json(_))
    }
}
