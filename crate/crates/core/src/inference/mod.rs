//! Stage two: sampling from a trained model and conditioning it on data.
//!
//! The decoder and feature map stay frozen. Inference runs HMC over the latent
//! `z` (plus `log sigma` when the noise level is unknown), starting from a
//! penalised point estimate.

mod fit;
mod posterior;
mod predict;

pub use fit::{infer, optimize_latent, InferConfig, LatentPosterior, OptimizeConfig, PointEstimate};
pub use posterior::{log_posterior, LogPosterior, LogPosteriorValue};
pub(crate) use posterior::{evaluate_split, latent_prior, noise_log_sd};
pub use predict::{predict, predictive_draws, summarize, PredictConfig, Prediction, Summary};

use serde::{Deserialize, Serialize};

use crate::mcmc::McmcError;
use crate::model::{ModelError, PiVaeModel};
use crate::rng::{standard_normals, Rng};

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error("invalid observations: {0}")]
    Data(String),
    #[error("noise model does not fit the model: {0}")]
    Incompatible(String),
    #[error("non-finite {component} term: {detail}")]
    NonFinite { component: &'static str, detail: String },
    #[error("point estimate diverged at step {step}")]
    Diverged { step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Observations `(s_j, y_j)` of the value channel. For point-process models
/// the locations are event times and `values` is ignored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedData {
    pub locations: Vec<Vec<f64>>,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl ObservedData {
    pub fn new(locations: Vec<Vec<f64>>, values: Vec<f64>) -> Self {
        Self { locations, values }
    }

    /// One-dimensional event times.
    pub fn events(times: &[f64]) -> Self {
        Self { locations: times.iter().map(|&t| vec![t]).collect(), values: vec![] }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    fn validate(&self, input_dim: usize, with_values: bool) -> Result<(), InferenceError> {
        if with_values && self.values.len() != self.locations.len() {
            return Err(InferenceError::Data(format!(
                "{} locations but {} values",
                self.locations.len(),
                self.values.len()
            )));
        }
        for (j, loc) in self.locations.iter().enumerate() {
            if loc.len() != input_dim {
                return Err(InferenceError::Data(format!("location {j} has dimension {}, model has {input_dim}", loc.len())));
            }
            if loc.iter().any(|v| !v.is_finite()) || (with_values && !self.values[j].is_finite()) {
                return Err(InferenceError::Data(format!("observation {j} is not finite")));
            }
        }
        Ok(())
    }
}

fn one() -> f64 {
    1.0
}

/// Observation model for the value channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    /// `y ~ N(f(s), sigma^2)` with `sigma ~ HalfNormal(sigma_prior_scale)`, sampled as `log sigma`.
    Gaussian {
        #[serde(default = "one")]
        sigma_prior_scale: f64,
    },
    /// `y ~ N(f(s), sigma^2)` with `sigma` known.
    GaussianFixed { sigma: f64 },
    /// Events of a Poisson process on `[0, horizon]` with `log lambda` on
    /// channel 0 and the cumulative intensity on channel 1.
    PoissonLgcp { horizon: f64 },
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Gaussian { sigma_prior_scale: 1.0 }
    }
}

impl NoiseModel {
    pub fn samples_sigma(&self) -> bool {
        matches!(self, NoiseModel::Gaussian { .. })
    }

    /// Checks the noise parameters alone.
    pub fn check(&self) -> Result<(), InferenceError> {
        match *self {
            NoiseModel::Gaussian { sigma_prior_scale: s } if !(s > 0.0 && s.is_finite()) => {
                Err(InferenceError::Config(format!("sigma_prior_scale must be positive, got {s}")))
            }
            NoiseModel::GaussianFixed { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(InferenceError::Config(format!("sigma must be positive and finite, got {sigma}")))
            }
            NoiseModel::PoissonLgcp { horizon } if !(horizon > 0.0 && horizon.is_finite()) => {
                Err(InferenceError::Config(format!("horizon must be positive, got {horizon}")))
            }
            _ => Ok(()),
        }
    }

    /// Checks the parameters and that `model` has the channels this family reads.
    pub fn validate(&self, model: &PiVaeModel) -> Result<(), InferenceError> {
        self.check()?;
        if matches!(self, NoiseModel::PoissonLgcp { .. }) && (model.channels() != 2 || model.input_dim() != 1) {
            return Err(InferenceError::Incompatible(
                "point-process inference needs a 1-D model with value and integral channels".into(),
            ));
        }
        Ok(())
    }

    /// Starting `log sigma` for optimisation: half the prior scale.
    pub(crate) fn initial_log_sigma(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma_prior_scale } => (0.5 * sigma_prior_scale).ln(),
            _ => 0.0,
        }
    }
}

/// A prior function draw: `z ~ N(0, I)`, then `d(z)^T Phi(s)` at every
/// location (one `C`-vector each), with the same `z` for all of them.
pub fn generate(model: &PiVaeModel, locations: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<Vec<f64>>, InferenceError> {
    let z = standard_normals(rng, model.latent_dim());
    if locations.is_empty() {
        return Ok(Vec::new());
    }
    Ok(model.evaluate(&z, locations)?)
}
