//! Hamiltonian Monte Carlo and convergence diagnostics.
//!
//! [`hmc_sample`] runs independent chains of static-trajectory HMC with a
//! jittered leapfrog count. Warmup adapts the step size by dual averaging and a
//! diagonal inverse metric from windowed variance estimates, then freezes both.
//! [`rhat`] is split-R-hat; [`ess`] combines chains with Geyer's initial
//! monotone sequence.

mod diagnostics;
mod hmc;

pub use diagnostics::{ess, posterior_predictive, rhat, Diagnostics};
pub use hmc::{hmc_sample, leapfrog, ChainSet, HmcConfig, Phase};

/// A differentiable log density on `R^P`.
///
/// Implementations are shared read-only across chain threads.
pub trait LogDensityTarget: Sync {
    fn dim(&self) -> usize;

    /// `(log p(x), grad log p(x))`, or a description of why `x` cannot be evaluated.
    fn log_density(&self, x: &[f64]) -> Result<(f64, Vec<f64>), String>;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum McmcError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("chain {chain}: cannot evaluate the target at the initial point {location:?}: {message}")]
    Init { chain: usize, location: Vec<f64>, message: String },
    #[error("chain {chain}: non-finite gradient at {location:?}")]
    NonFiniteGradient { chain: usize, location: Vec<f64> },
    #[error(
        "gradient check failed at {location:?}, coordinate {coordinate}: analytic {analytic}, finite difference {numeric}"
    )]
    GradientCheck { location: Vec<f64>, coordinate: usize, analytic: f64, numeric: f64 },
    #[error("chain {chain}: step size collapsed, every warmup proposal was rejected")]
    StepSizeCollapsed { chain: usize },
    #[error("need at least {need} {what}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("predictor failed on chain {chain}, draw {draw}: {message}")]
    Predictor { chain: usize, draw: usize, message: String },
}
