use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_update, AdamConfig};
use crate::mcmc::{hmc_sample, ChainSet, Diagnostics, HmcConfig};
use crate::model::PiVaeModel;
use crate::rng::{standard_normals, stream};

use super::{InferenceError, LogPosterior, NoiseModel, ObservedData};

/// Adam on the negative log posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub steps: usize,
    pub lr: f64,
    /// Additional starts drawn from the prior; the first start is always `z = 0`.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { steps: 500, lr: 0.05, restarts: 2, seed: 0 }
    }
}

/// Penalised point estimate of `(z, sigma)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub z: Vec<f64>,
    /// `None` when the noise model does not sample it.
    pub sigma: Option<f64>,
    /// Negative log posterior at the estimate.
    pub objective: f64,
    /// `(z, log sigma)` as seen by the sampler.
    pub theta: Vec<f64>,
}

fn optimize_target(target: &LogPosterior, noise: &NoiseModel, config: &OptimizeConfig) -> Result<PointEstimate, InferenceError> {
    let adam = AdamConfig::with_lr(config.lr);
    adam.validate().map_err(|e| InferenceError::Config(e.to_string()))?;
    let dim = target.dim();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut failed_at = None;
    for r in 0..=config.restarts {
        let mut theta = if r == 0 {
            vec![0.0; target.latent_dim()]
        } else {
            standard_normals(&mut stream(config.seed, r as u64), target.latent_dim())
        };
        if target.samples_sigma() {
            theta.push(noise.initial_log_sigma());
        }
        let (mut m, mut v) = (vec![0.0; dim], vec![0.0; dim]);
        for step in 0..=config.steps {
            let value = match target.evaluate(&theta) {
                Ok(v) => v,
                Err(_) => {
                    failed_at.get_or_insert(step);
                    break;
                }
            };
            let objective = -value.total;
            if best.as_ref().is_none_or(|(b, _)| objective < *b) {
                best = Some((objective, theta.clone()));
            }
            if step == config.steps {
                break;
            }
            let grad: Vec<f64> = value.gradient.iter().map(|g| -g).collect();
            adam_update(&mut theta, &grad, &mut m, &mut v, step as u64 + 1, &adam);
        }
    }
    let (objective, theta) = best.ok_or(InferenceError::Diverged { step: failed_at.unwrap_or(0) })?;
    let l = target.latent_dim();
    Ok(PointEstimate {
        z: theta[..l].to_vec(),
        sigma: target.samples_sigma().then(|| theta[l].exp()),
        objective,
        theta,
    })
}

/// Maximum a posteriori estimate by Adam with restarts.
///
/// The best iterate over all starts is returned, so the objective is never
/// worse than at `z = 0`. Fails only if no start yields a finite value.
pub fn optimize_latent(
    model: &PiVaeModel,
    data: &ObservedData,
    noise: &NoiseModel,
    config: &OptimizeConfig,
) -> Result<PointEstimate, InferenceError> {
    let target = LogPosterior::new(model, data, noise)?;
    optimize_target(&target, noise, config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub hmc: HmcConfig,
    pub optimize: OptimizeConfig,
    /// Start chains at the point estimate plus this much Gaussian jitter;
    /// a negative value starts them from the sampler's default box instead.
    pub init_jitter: f64,
    /// R-hat above this raises a warning.
    pub rhat_bar: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { hmc: HmcConfig::default(), optimize: OptimizeConfig::default(), init_jitter: 0.1, rhat_bar: 1.01 }
    }
}

/// Posterior draws of `(z, log sigma)` with their convergence summary.
#[derive(Clone, Debug)]
pub struct LatentPosterior {
    pub chains: ChainSet,
    pub diagnostics: Diagnostics,
    pub model: PiVaeModel,
    pub noise: NoiseModel,
    pub point: Option<PointEstimate>,
}

impl LatentPosterior {
    pub fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    /// False when any R-hat is above the bar or there were divergences.
    pub fn converged(&self) -> bool {
        self.diagnostics.converged()
    }

    pub fn warnings(&self) -> &[String] {
        &self.diagnostics.warnings
    }

    /// Observation noise of one draw, or the fixed value.
    pub fn sigma_of(&self, draw: &[f64]) -> Option<f64> {
        match self.noise {
            NoiseModel::Gaussian { .. } => Some(draw[self.latent_dim()].exp()),
            NoiseModel::GaussianFixed { sigma } => Some(sigma),
            NoiseModel::PoissonLgcp { .. } => None,
        }
    }
}

/// HMC over the latent posterior, started around the penalised point estimate.
///
/// High R-hat does not fail the call: it is reported through the warnings.
pub fn infer(
    model: &PiVaeModel,
    data: &ObservedData,
    noise: &NoiseModel,
    config: &InferConfig,
) -> Result<LatentPosterior, InferenceError> {
    if !(config.rhat_bar > 1.0) {
        return Err(InferenceError::Config(format!("rhat_bar must exceed 1, got {}", config.rhat_bar)));
    }
    let target = LogPosterior::new(model, data, noise)?;
    let (point, inits) = if config.init_jitter >= 0.0 {
        let point = optimize_target(&target, noise, &config.optimize)?;
        let inits: Vec<Vec<f64>> = (0..config.hmc.chains)
            .map(|c| {
                let mut rng = stream(config.hmc.seed ^ 0x5eed_1417, c as u64);
                let jitter = standard_normals(&mut rng, target.dim());
                point.theta.iter().zip(jitter).map(|(t, j)| t + config.init_jitter * j).collect()
            })
            .collect();
        (Some(point), Some(inits))
    } else {
        (None, None)
    };
    let chains = hmc_sample(&target, &config.hmc, inits.as_deref())?;
    let diagnostics = Diagnostics::compute(&chains, config.rhat_bar)?;
    Ok(LatentPosterior { chains, diagnostics, model: model.clone(), noise: noise.clone(), point })
}
