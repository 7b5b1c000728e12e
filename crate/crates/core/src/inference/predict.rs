use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::mcmc::posterior_predictive;

use super::{InferenceError, LatentPosterior};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    /// Use every `stride`-th draw of each chain; `0` picks a stride that keeps
    /// at most `max_draws` draws.
    pub stride: usize,
    pub max_draws: usize,
    /// Also report the value channel with observation noise added.
    pub noise_band: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { stride: 0, max_draws: 1000, noise_band: false }
    }
}

impl PredictConfig {
    fn stride_for(&self, draws_per_chain: usize, chains: usize) -> usize {
        if self.stride > 0 {
            return self.stride;
        }
        let total = draws_per_chain * chains;
        total.div_ceil(self.max_draws.max(1)).max(1)
    }
}

/// Location-wise summary of a set of draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, sample sd and the 2.5/50/97.5% quantiles. Panics on empty input.
pub fn summarize(values: &[f64]) -> Summary {
    assert!(!values.is_empty(), "cannot summarise zero draws");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Summary { mean, sd, q025: quantile(&sorted, 0.025), q50: quantile(&sorted, 0.5), q975: quantile(&sorted, 0.975) }
}

/// Quantile of the equal-weight mixture of `N(mean_k, sd_k^2)` by bisection.
fn mixture_quantile(means: &[f64], sds: &[f64], p: f64) -> f64 {
    let cdf = |x: f64| {
        means
            .iter()
            .zip(sds)
            .map(|(&m, &s)| Normal::new(m, s).map(|d| d.cdf(x)).unwrap_or(if x >= m { 1.0 } else { 0.0 }))
            .sum::<f64>()
            / means.len() as f64
    };
    let spread = sds.iter().cloned().fold(0.0, f64::max) * 10.0;
    let mut lo = means.iter().cloned().fold(f64::INFINITY, f64::min) - spread;
    let mut hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + spread;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Posterior predictive summaries at new locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub locations: Vec<Vec<f64>>,
    /// Epistemic summaries, `function[location][channel]`.
    pub function: Vec<Vec<Summary>>,
    /// Value channel with observation noise, when requested and defined.
    pub noisy: Option<Vec<Summary>>,
    pub draws: usize,
}

/// Decoded function values per retained draw, `out[draw][location][channel]`.
///
/// Each draw is computed independently per location, so predictions at a
/// subset of locations equal the restriction of a superset bit for bit.
pub fn predictive_draws(
    posterior: &LatentPosterior,
    locations: &[Vec<f64>],
    stride: usize,
) -> Result<Vec<Vec<Vec<f64>>>, InferenceError> {
    let model = &posterior.model;
    if locations.is_empty() {
        return Ok(Vec::new());
    }
    let phi = model.phi(locations)?;
    let l = model.latent_dim();
    let c = model.channels();
    let out = posterior_predictive(&posterior.chains, stride, |theta| {
        let beta = model.decode(&theta[..l])?;
        let flat = model.readout(&phi, &beta);
        Ok::<_, crate::model::ModelError>(flat.chunks(c).map(<[f64]>::to_vec).collect())
    })?;
    Ok(out)
}

/// Mean, sd and central 95% interval of `d(z)^T Phi(s)` over posterior draws,
/// optionally with the Gaussian observation noise mixed in.
pub fn predict(
    posterior: &LatentPosterior,
    locations: &[Vec<f64>],
    config: &PredictConfig,
) -> Result<Prediction, InferenceError> {
    let chains = &posterior.chains;
    if chains.draws_per_chain() == 0 {
        return Err(InferenceError::Data("posterior has no draws".into()));
    }
    let stride = config.stride_for(chains.draws_per_chain(), chains.chains());
    let draws = predictive_draws(posterior, locations, stride)?;
    let sigmas: Vec<Option<f64>> = posterior_predictive(chains, stride, |theta| {
        Ok::<_, InferenceError>(posterior.sigma_of(theta))
    })?;
    let n_draws = sigmas.len();
    let c = posterior.model.channels();
    let function: Vec<Vec<Summary>> = (0..locations.len())
        .map(|j| (0..c).map(|k| summarize(&draws.iter().map(|d| d[j][k]).collect::<Vec<_>>())).collect())
        .collect();
    let noisy = if config.noise_band && sigmas.iter().all(Option::is_some) {
        let sds: Vec<f64> = sigmas.iter().map(|s| s.unwrap_or(0.0)).collect();
        let mean_var = sds.iter().map(|s| s * s).sum::<f64>() / n_draws as f64;
        Some(
            (0..locations.len())
                .map(|j| {
                    let means: Vec<f64> = draws.iter().map(|d| d[j][0]).collect();
                    let f = &function[j][0];
                    Summary {
                        mean: f.mean,
                        sd: (f.sd * f.sd + mean_var).sqrt(),
                        q025: mixture_quantile(&means, &sds, 0.025),
                        q50: mixture_quantile(&means, &sds, 0.5),
                        q975: mixture_quantile(&means, &sds, 0.975),
                    }
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(Prediction { locations: locations.to_vec(), function, noisy, draws: n_draws })
}
