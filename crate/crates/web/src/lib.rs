//! Browser demo: train a small prior on 1-D GP draws, sample from it, and
//! condition it on points clicked onto a canvas.
//!
//! The logic lives in plain Rust methods so it can be tested natively; the
//! `#[wasm_bindgen]` layer only converts errors.

use wasm_bindgen::prelude::*;

use pivae::inference::{generate, infer, predict, InferConfig, PredictConfig};
use pivae::mcmc::HmcConfig;
use pivae::model::train_prior;
use pivae::priors::{build_prior_dataset, PriorConfig};
use pivae::rng::stream;
use pivae::{KernelFamily, NoiseModel, ObservedData, PiVaeModel, TrainConfig};

/// Band returned by [`Demo::condition`]: posterior mean and central 95% interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[wasm_bindgen]
pub struct Demo {
    model: PiVaeModel,
    seed: u64,
    final_loss: f64,
}

fn prior_config(lengthscale: f64) -> PriorConfig {
    PriorConfig::gp(KernelFamily::Rbf, [lengthscale, lengthscale], 256, 20).with_box([0.0, 1.0])
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        latent_dim: 5,
        features: 10,
        centres: 12,
        phi_hidden: vec![16],
        encoder_hidden: vec![32],
        decoder_hidden: vec![32],
        epochs: 30,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    }
}

/// `n` evenly spaced points on `[0, 1]`.
pub fn grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

fn locations(xs: &[f64]) -> Vec<Vec<f64>> {
    xs.iter().map(|&x| vec![x]).collect()
}

impl Demo {
    pub fn train(seed: u64, lengthscale: f64) -> Result<Self, String> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(format!("lengthscale must be positive, got {lengthscale}"));
        }
        let dataset = build_prior_dataset(&prior_config(lengthscale), seed).map_err(|e| e.to_string())?;
        let outcome = train_prior(&dataset, &train_config(seed)).map_err(|e| e.to_string())?;
        Ok(Self { model: outcome.model, seed, final_loss: outcome.report.final_loss })
    }

    /// `draws` prior functions on the grid, concatenated draw by draw.
    pub fn draws(&self, draws: usize, grid_size: usize) -> Result<Vec<Vec<f64>>, String> {
        let locs = locations(&grid(grid_size));
        (0..draws)
            .map(|i| {
                let values = generate(&self.model, &locs, &mut stream(self.seed ^ 0xd3a0, i as u64)).map_err(|e| e.to_string())?;
                Ok(values.into_iter().map(|v| v[0]).collect())
            })
            .collect()
    }

    /// Posterior band on the grid given noisy observations `(xs, ys)`.
    pub fn posterior(&self, xs: &[f64], ys: &[f64], grid_size: usize) -> Result<Band, String> {
        let data = ObservedData::new(locations(xs), ys.to_vec());
        let config = InferConfig {
            hmc: HmcConfig { chains: 2, warmup: 150, draws: 150, leapfrog_steps: 16, seed: self.seed, ..HmcConfig::default() },
            ..InferConfig::default()
        };
        let noise = NoiseModel::Gaussian { sigma_prior_scale: 0.5 };
        let posterior = infer(&self.model, &data, &noise, &config).map_err(|e| e.to_string())?;
        let pred = predict(&posterior, &locations(&grid(grid_size)), &PredictConfig::default()).map_err(|e| e.to_string())?;
        let f = |g: fn(&pivae::inference::Summary) -> f64| pred.function.iter().map(|row| g(&row[0])).collect();
        Ok(Band { mean: f(|s| s.mean), lower: f(|s| s.q025), upper: f(|s| s.q975) })
    }
}

#[wasm_bindgen]
impl Demo {
    /// Draws 256 GP functions with the given lengthscale and trains on them.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, lengthscale: f64) -> Result<Demo, JsError> {
        Self::train(seed as u64, lengthscale).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = finalLoss)]
    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    /// Flat `draws * grid_size` array of prior function values.
    #[wasm_bindgen(js_name = priorDraws)]
    pub fn prior_draws(&self, draws: usize, grid_size: usize) -> Result<Vec<f64>, JsError> {
        Ok(self.draws(draws, grid_size).map_err(|e| JsError::new(&e))?.concat())
    }

    /// Flat `[mean, lower, upper]`, each `grid_size` long.
    pub fn condition(&self, xs: Vec<f64>, ys: Vec<f64>, grid_size: usize) -> Result<Vec<f64>, JsError> {
        let band = self.posterior(&xs, &ys, grid_size).map_err(|e| JsError::new(&e))?;
        Ok([band.mean, band.lower, band.upper].concat())
    }
}
