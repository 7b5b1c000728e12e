use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_update, AdamConfig};
use crate::linalg::{cholesky_inverse, cholesky_log_det, cholesky_solve, cholesky_with_jitter, solve_lower};
use crate::priors::{collect_indexed, euclidean, KernelFamily, KernelSpec};
use crate::rng::{standard_normals, stream};

use super::BaselineError;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Zero-mean exact GP regression with Gaussian noise of variance `noise_var`.
///
/// Fitting costs one `O(n^3)` Cholesky factorisation; each prediction costs `O(n^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpRegressor {
    pub kernel: KernelSpec,
    pub noise_var: f64,
}

/// A factorised GP conditioned on training data.
#[derive(Clone, Debug)]
pub struct GpFit {
    pub regressor: GpRegressor,
    x: Vec<Vec<f64>>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    /// Diagonal jitter that made the factorisation succeed (kernel jitter included).
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
}

/// Predictive moments of the latent function; add `noise_var` for new observations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GpOutput {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub noise_var: f64,
    pub log_marginal_likelihood: f64,
}

fn check_points(x: &[Vec<f64>], what: &str) -> Result<usize, BaselineError> {
    let d = x.first().map_or(0, Vec::len);
    for (i, p) in x.iter().enumerate() {
        if p.len() != d || d == 0 {
            return Err(BaselineError::Data(format!("{what} point {i} has dimension {}, expected {d}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::Data(format!("{what} point {i} is not finite")));
        }
    }
    Ok(d)
}

impl GpRegressor {
    pub fn new(kernel: KernelSpec, noise_var: f64) -> Self {
        Self { kernel, noise_var }
    }

    fn validate(&self) -> Result<(), BaselineError> {
        self.kernel.validate()?;
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(BaselineError::Config(format!("noise variance must be non-negative, got {}", self.noise_var)));
        }
        Ok(())
    }

    /// Factorises `K + (noise_var + jitter) I` and caches `alpha = K^{-1} y`.
    pub fn fit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<GpFit, BaselineError> {
        self.validate()?;
        if x.is_empty() {
            return Err(BaselineError::Data("GP needs at least one training point".into()));
        }
        if x.len() != y.len() {
            return Err(BaselineError::Data(format!("{} inputs but {} targets", x.len(), y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::Data("targets must be finite".into()));
        }
        check_points(x, "training")?;
        let n = x.len();
        let mut k = self.kernel.gram(x);
        for i in 0..n {
            k[i * n + i] += self.noise_var;
        }
        let (chol, jitter) = cholesky_with_jitter(&k, n, self.kernel.jitter, 6)?;
        let alpha = cholesky_solve(&chol, n, y);
        let fit_term: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let lml = -0.5 * fit_term - 0.5 * cholesky_log_det(&chol, n) - 0.5 * n as f64 * LN_2PI;
        Ok(GpFit { regressor: *self, x: x.to_vec(), chol, alpha, jitter, log_marginal_likelihood: lml })
    }
}

impl GpFit {
    /// Latent mean and variance at each test point; test points are independent.
    pub fn predict(&self, test: &[Vec<f64>]) -> Result<GpOutput, BaselineError> {
        let d = self.x[0].len();
        if !test.is_empty() && check_points(test, "test")? != d {
            return Err(BaselineError::Data(format!("test points must have dimension {d}")));
        }
        let n = self.x.len();
        let kernel = &self.regressor.kernel;
        let moments = collect_indexed(test.len(), |j| {
            let ks: Vec<f64> = self.x.iter().map(|x| kernel.between(x, &test[j])).collect();
            let mean: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
            let v = solve_lower(&self.chol, n, &ks);
            let prior = kernel.amplitude;
            let var = (prior - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
            Ok::<_, BaselineError>((mean, var))
        })?;
        let (mean, var) = moments.into_iter().unzip();
        Ok(GpOutput {
            mean,
            var,
            noise_var: self.regressor.noise_var,
            log_marginal_likelihood: self.log_marginal_likelihood,
        })
    }
}

/// Fits on `(x, y)` and predicts at `test` in one call.
pub fn gp_fit_predict(reg: &GpRegressor, x: &[Vec<f64>], y: &[f64], test: &[Vec<f64>]) -> Result<GpOutput, BaselineError> {
    reg.fit(x, y)?.predict(test)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpOptConfig {
    pub steps: usize,
    pub lr: f64,
    /// Starts in total; the first is the given hyperparameters.
    pub restarts: usize,
    pub seed: u64,
    /// Lower bound on the noise variance during the search.
    pub min_noise_var: f64,
}

impl Default for GpOptConfig {
    fn default() -> Self {
        Self { steps: 200, lr: 0.05, restarts: 3, seed: 0, min_noise_var: 1e-6 }
    }
}

/// `(log l, log amplitude, log sigma_n)`.
fn pack(reg: &GpRegressor) -> [f64; 3] {
    [reg.kernel.lengthscale.ln(), reg.kernel.amplitude.ln(), 0.5 * reg.noise_var.ln()]
}

fn unpack(base: &GpRegressor, p: &[f64; 3], min_noise_var: f64) -> GpRegressor {
    let kernel = KernelSpec { lengthscale: p[0].exp(), amplitude: p[1].exp(), ..base.kernel };
    GpRegressor { kernel, noise_var: (2.0 * p[2]).exp().max(min_noise_var) }
}

/// Gradient of the log marginal likelihood in the log parameters:
/// `0.5 tr((alpha alpha^T - K^{-1}) dK)`.
fn lml_gradient(fit: &GpFit) -> [f64; 3] {
    let n = fit.x.len();
    let kern = fit.regressor.kernel;
    let inv = cholesky_inverse(&fit.chol, n);
    let mut g = [0.0; 3];
    for i in 0..n {
        for j in 0..=i {
            let w = fit.alpha[i] * fit.alpha[j] - inv[i * n + j];
            let w = if i == j { 0.5 * w } else { w };
            let d = euclidean(&fit.x[i], &fit.x[j]);
            let r = d / kern.lengthscale;
            let k = kern.eval_unchecked(d);
            let dk_dlog_l = match kern.family {
                KernelFamily::Rbf => 2.0 * r * r * k,
                KernelFamily::Matern32 => 3.0 * kern.amplitude * r * r * (-(3f64.sqrt()) * r).exp(),
            };
            g[0] += w * dk_dlog_l;
            g[1] += w * k;
            if i == j {
                g[2] += w * 2.0 * fit.regressor.noise_var;
            }
        }
    }
    g
}

/// Maximises the log marginal likelihood over lengthscale, amplitude and noise
/// by Adam in log space, keeping the best of several starts.
pub fn optimize_gp(
    init: &GpRegressor,
    x: &[Vec<f64>],
    y: &[f64],
    config: &GpOptConfig,
) -> Result<GpFit, BaselineError> {
    if config.restarts == 0 {
        return Err(BaselineError::Config("at least one start is needed".into()));
    }
    let adam = AdamConfig::with_lr(config.lr);
    adam.validate().map_err(|e| BaselineError::Config(e.to_string()))?;
    let floor = config.min_noise_var;
    let start = GpRegressor { noise_var: init.noise_var.max(floor), ..*init };
    let mut best = start.fit(x, y)?;
    for r in 0..config.restarts {
        let mut p = pack(&start);
        if r > 0 {
            let jitter = standard_normals(&mut stream(config.seed, r as u64), 3);
            p.iter_mut().zip(jitter).for_each(|(v, j)| *v += j);
        }
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        for step in 0..=config.steps {
            let Ok(fit) = unpack(&start, &p, floor).fit(x, y) else { break };
            if !fit.log_marginal_likelihood.is_finite() {
                break;
            }
            let grad = if step < config.steps { Some(lml_gradient(&fit)) } else { None };
            if fit.log_marginal_likelihood > best.log_marginal_likelihood {
                best = fit;
            }
            let Some(grad) = grad else { break };
            let mut neg = grad.map(|g| -g);
            if (2.0 * p[2]).exp() <= floor && neg[2] > 0.0 {
                neg[2] = 0.0;
            }
            adam_update(&mut p, &neg, &mut m, &mut v, step as u64 + 1, &adam);
        }
    }
    Ok(best)
}
