//! Train/test comparison of the model against exact GP regression on a
//! synthetic field, with identical splits for both methods.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::baselines::{optimize_gp, BaselineError, GpOptConfig, GpRegressor};
use crate::inference::{infer, optimize_latent, predict, InferConfig, InferenceError, NoiseModel, ObservedData, OptimizeConfig, PredictConfig};
use crate::mcmc::Diagnostics;
use crate::metrics::{gaussian_nll, mse};
use crate::model::{train_prior, ModelError, PiVaeModel, TrainConfig};
use crate::priors::{build_prior_dataset, sample_gp, KernelSpec, PriorConfig, PriorError};
use crate::rng::{standard_normals, stream};

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// One GP draw observed with Gaussian noise at uniform random locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub input_dim: usize,
    pub kernel: KernelSpec,
    pub noise_sd: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub location_box: [f64; 2],
    pub seed: u64,
}

/// How the model conditions on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchInference {
    Mcmc { infer: InferConfig },
    Optimize { optimize: OptimizeConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpBaselineConfig {
    /// Starting hyperparameters for the evidence maximisation.
    pub kernel: KernelSpec,
    pub noise_var: f64,
    #[serde(default)]
    pub optimize: GpOptConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub field: FieldConfig,
    pub split_seed: u64,
    pub prior: PriorConfig,
    pub prior_seed: u64,
    pub train: TrainConfig,
    pub inference: BenchInference,
    pub gp: GpBaselineConfig,
    /// Wall-clock seconds vary between runs; they are only reported when set.
    #[serde(default)]
    pub record_wall_clock: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub name: String,
    pub train_mse: f64,
    pub test_mse: f64,
    pub train_rmse: f64,
    pub test_rmse: f64,
    /// Mean negative log predictive density of the test targets.
    pub test_nll: f64,
    pub seconds: Option<f64>,
}

impl MethodMetrics {
    fn new(name: &str, train: (&[f64], &[f64]), test: (&[f64], &[f64]), test_var: &[f64], seconds: Option<f64>) -> Self {
        let train_mse = mse(train.0, train.1);
        let test_mse = mse(test.0, test.1);
        Self {
            name: name.into(),
            train_mse,
            test_mse,
            train_rmse: train_mse.sqrt(),
            test_rmse: test_mse.sqrt(),
            test_nll: gaussian_nll(test.0, test.1, test_var),
            seconds,
        }
    }

    /// `test_mse / train_mse`; large values indicate overfitting.
    pub fn generalisation_ratio(&self) -> f64 {
        self.test_mse / self.train_mse
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub split_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub methods: Vec<MethodMetrics>,
    pub gp_hyperparameters: GpRegressor,
    pub pivae_final_loss: Option<f64>,
    pub diagnostics: Option<Diagnostics>,
}

impl BenchmarkReport {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.name == name)
    }
}

/// Noisy field values at `n_train + n_test` uniform locations, with the noise-free truth.
pub fn simulate_field(config: &FieldConfig) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>), BenchmarkError> {
    let n = config.n_train + config.n_test;
    let [lo, hi] = config.location_box;
    if config.n_train == 0 || config.n_test == 0 || config.input_dim == 0 || !(lo < hi) || !(config.noise_sd >= 0.0) {
        return Err(BenchmarkError::Config("field needs positive sizes, a valid box and noise_sd >= 0".into()));
    }
    let mut rng = stream(config.seed, 0);
    let locations: Vec<Vec<f64>> = (0..n).map(|_| (0..config.input_dim).map(|_| rng.random_range(lo..hi)).collect()).collect();
    let truth = sample_gp(&config.kernel, &locations, &mut rng)?;
    let noise = standard_normals(&mut rng, n);
    let y = truth.iter().zip(noise).map(|(f, e)| f + config.noise_sd * e).collect();
    Ok((locations, truth, y))
}

/// A random partition into `n_train` and the rest.
pub fn split_indices(n: usize, n_train: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, 0));
    let test = idx.split_off(n_train.min(n));
    (idx, test)
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Runs both methods on one split. A pre-trained `model` skips stage one.
pub fn run_benchmark(config: &BenchmarkConfig, model: Option<&PiVaeModel>) -> Result<BenchmarkReport, BenchmarkError> {
    let clock = |t: Instant| config.record_wall_clock.then(|| t.elapsed().as_secs_f64());
    let (locations, _, y) = simulate_field(&config.field)?;
    let (train_idx, test_idx) = split_indices(locations.len(), config.field.n_train, config.split_seed);
    let (x_train, y_train) = (pick(&locations, &train_idx), pick(&y, &train_idx));
    let (x_test, y_test) = (pick(&locations, &test_idx), pick(&y, &test_idx));

    let start = Instant::now();
    let (trained, final_loss) = match model {
        Some(m) => (m.clone(), None),
        None => {
            let dataset = build_prior_dataset(&config.prior, config.prior_seed)?;
            let out = train_prior(&dataset, &config.train)?;
            (out.model, Some(out.report.final_loss))
        }
    };
    let data = ObservedData::new(x_train.clone(), y_train.clone());
    let noise = NoiseModel::default();
    let (train_pred, test_pred, test_var, diagnostics) = match &config.inference {
        BenchInference::Mcmc { infer: ic } => {
            let post = infer(&trained, &data, &noise, ic)?;
            let pc = PredictConfig { noise_band: true, ..PredictConfig::default() };
            let tr = predict(&post, &x_train, &pc)?;
            let te = predict(&post, &x_test, &pc)?;
            let var = te.noisy.as_ref().expect("noise band requested").iter().map(|s| s.sd * s.sd).collect();
            let mean = |p: &crate::inference::Prediction| p.function.iter().map(|s| s[0].mean).collect::<Vec<_>>();
            (mean(&tr), mean(&te), var, Some(post.diagnostics))
        }
        BenchInference::Optimize { optimize } => {
            let est = optimize_latent(&trained, &data, &noise, optimize)?;
            let sigma2 = est.sigma.unwrap_or(1.0).powi(2);
            let f = |x: &[Vec<f64>]| trained.evaluate(&est.z, x).map(|v| v.into_iter().map(|r| r[0]).collect::<Vec<_>>());
            (f(&x_train)?, f(&x_test)?, vec![sigma2; x_test.len()], None)
        }
    };
    let pivae = MethodMetrics::new("pivae", (&y_train, &train_pred), (&y_test, &test_pred), &test_var, clock(start));

    let start = Instant::now();
    let init = GpRegressor::new(config.gp.kernel, config.gp.noise_var);
    let fit = optimize_gp(&init, &x_train, &y_train, &config.gp.optimize)?;
    let tr = fit.predict(&x_train)?;
    let te = fit.predict(&x_test)?;
    let var: Vec<f64> = te.var.iter().map(|v| v + te.noise_var).collect();
    let gp = MethodMetrics::new("exact_gp", (&y_train, &tr.mean), (&y_test, &te.mean), &var, clock(start));

    Ok(BenchmarkReport {
        split_seed: config.split_seed,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        methods: vec![pivae, gp],
        gp_hyperparameters: fit.regressor,
        pivae_final_loss: final_loss,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_partition() {
        let (a, b) = split_indices(50, 20, 3);
        assert_eq!((a.len(), b.len()), (20, 30));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_indices(50, 20, 3), (a, b));
    }

    #[test]
    fn field_is_reproducible() {
        let cfg = FieldConfig {
            input_dim: 2,
            kernel: KernelSpec::rbf(0.3),
            noise_sd: 0.1,
            n_train: 10,
            n_test: 5,
            location_box: [0.0, 1.0],
            seed: 4,
        };
        let a = simulate_field(&cfg).unwrap();
        assert_eq!(a, simulate_field(&cfg).unwrap());
        assert_eq!(a.0.len(), 15);
        assert!(a.1.iter().zip(&a.2).all(|(f, y)| (f - y).abs() < 1.0));
    }
}
