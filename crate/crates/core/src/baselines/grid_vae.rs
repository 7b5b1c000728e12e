use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, Activation, AdamConfig, AdamState, Graph, NodeId, Tensor, TensorMap};
use crate::inference::{evaluate_split, latent_prior, noise_log_sd, summarize, InferConfig, LogPosteriorValue, NoiseModel, ObservedData, Summary};
use crate::mcmc::{hmc_sample, ChainSet, Diagnostics, LogDensityTarget};
use crate::model::{decoder_graph, encoder_graph, Architecture};
use crate::priors::{collect_indexed, PriorDataset};
use crate::rng::{standard_normals, stream};

use super::BaselineError;

const CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridVaeConfig {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for GridVaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            encoder_hidden: vec![64, 32],
            decoder_hidden: vec![32, 64],
            activation: Activation::Tanh,
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            kl_weight: 1.0,
            seed: 0,
        }
    }
}

/// A plain VAE over function values on one fixed grid of `K` locations.
///
/// It is not a stochastic process: it has no notion of locations other than
/// the grid, or of the grid in any other order.
#[derive(Clone, Debug, PartialEq)]
pub struct GridVae {
    grid: Vec<Vec<f64>>,
    arch: Architecture,
    params: TensorMap,
    value_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEpoch {
    pub epoch: usize,
    /// Per function.
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

pub struct GridVaeOutcome {
    pub model: GridVae,
    pub epochs: Vec<GridEpoch>,
    /// Mean squared error of `d(mu(x))` against `x`, in the data's units.
    pub reconstruction_mse: f64,
}

struct GridLoss {
    graph: Graph,
    recon: NodeId,
    kl: NodeId,
    total: NodeId,
}

impl GridLoss {
    fn new(arch: &Architecture, kl_weight: f64) -> Self {
        let mut g = Graph::new();
        let x = g.input("x");
        let eps = g.input("eps");
        let (mu, log_sd) = encoder_graph(&mut g, arch, x);
        let sd = g.exp(log_sd);
        let noise = g.mul(sd, eps);
        let z = g.add(mu, noise);
        let x_hat = decoder_graph(&mut g, arch, z);
        let recon = g.squared_error(x, x_hat);
        let kl = g.gaussian_kl(mu, sd);
        let weighted = g.scale(kl, kl_weight);
        let total = g.add(recon, weighted);
        Self { graph: g, recon, kl, total }
    }
}

fn grid_arch(k: usize, d: usize, config: &GridVaeConfig) -> Architecture {
    Architecture {
        input_dim: d,
        features: k,
        latent_dim: config.latent_dim,
        channels: 1,
        centres: 1,
        phi_hidden: vec![],
        encoder_hidden: config.encoder_hidden.clone(),
        decoder_hidden: config.decoder_hidden.clone(),
        activation: config.activation,
    }
}

impl GridVae {
    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    /// Function values on the grid for latent `z`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, BaselineError> {
        let l = self.arch.latent_dim;
        if z.len() != l {
            return Err(BaselineError::Data(format!("latent of length {}, expected {l}", z.len())));
        }
        let mut g = Graph::new();
        let zn = g.input("z");
        let out = decoder_graph(&mut g, &self.arch, zn);
        let eval = g.forward(&TensorMap::from([("z".into(), Tensor::row(z.to_vec()))]), &self.params).map_err(crate::model::ModelError::from)?;
        Ok(eval.value(out).data().iter().map(|v| v * self.value_scale).collect())
    }

    /// `d(mu(x))`: the grid function reconstructed through the encoder mean.
    pub fn reconstruct(&self, values: &[f64]) -> Result<Vec<f64>, BaselineError> {
        if values.len() != self.grid.len() {
            return Err(BaselineError::Data(format!("{} values for a grid of {}", values.len(), self.grid.len())));
        }
        let mut g = Graph::new();
        let x = g.input("x");
        let (mu, _) = encoder_graph(&mut g, &self.arch, x);
        let x_scaled = values.iter().map(|v| v / self.value_scale).collect();
        let eval = g.forward(&TensorMap::from([("x".into(), Tensor::row(x_scaled))]), &self.params).map_err(crate::model::ModelError::from)?;
        self.decode(eval.value(mu).data())
    }

    /// Grid positions of `locations`, which must be grid points in grid order.
    fn grid_indices(&self, locations: &[Vec<f64>]) -> Result<Vec<usize>, BaselineError> {
        let mut next = 0;
        let mut out = Vec::with_capacity(locations.len());
        for (j, loc) in locations.iter().enumerate() {
            let k = (next..self.grid.len()).find(|&k| self.grid[k] == *loc).ok_or(BaselineError::OffGrid { index: j })?;
            out.push(k);
            next = k + 1;
        }
        Ok(out)
    }
}

/// Trains the VAE on draws that all share one grid, with Gaussian
/// reconstruction `sum (x - d(z))^2` and the KL to `N(0, I)`.
pub fn train_grid_vae(dataset: &PriorDataset, config: &GridVaeConfig) -> Result<GridVaeOutcome, BaselineError> {
    if config.latent_dim == 0 || config.batch_size == 0 || !(config.kl_weight >= 0.0) {
        return Err(BaselineError::Config("latent_dim and batch_size must be positive, kl_weight non-negative".into()));
    }
    let draws = dataset.draws();
    let grid = draws[0].locations.clone();
    if let Some(d) = draws.iter().find(|d| d.locations != grid) {
        return Err(BaselineError::HeterogeneousGrid { id: d.id });
    }
    let k = grid.len();
    let arch = grid_arch(k, dataset.input_dim(), config);
    arch.validate()?;
    let n = draws.len();
    let ss: f64 = draws.iter().flat_map(|d| &d.values).map(|v| v * v).sum();
    let rms = (ss / (n * k) as f64).sqrt();
    let scale = if rms > 0.0 && rms.is_finite() { rms } else { 1.0 };
    let rows: Vec<Vec<f64>> = draws.iter().map(|d| d.values.iter().map(|v| v / scale).collect()).collect();

    let mut params: TensorMap = arch
        .init_params(&dataset.bounding_box(), &mut stream(config.seed, 0))
        .into_iter()
        .filter(|(name, _)| !name.starts_with("phi."))
        .collect();
    let loss = GridLoss::new(&arch, config.kl_weight);
    let mut adam = AdamState::new(config.adam).map_err(crate::model::ModelError::from)?;
    let l = arch.latent_dim;

    let run = |params: &TensorMap, members: &[usize], eps: &[f64], grads: bool| {
        let chunks: Vec<&[usize]> = members.chunks(CHUNK).collect();
        let results = collect_indexed(chunks.len(), |ci| {
            let chunk = chunks[ci];
            let off = ci * CHUNK;
            let x = Tensor::from_rows(&chunk.iter().map(|&i| &rows[i][..]).collect::<Vec<_>>());
            let e = Tensor::matrix(chunk.len(), l, eps[off * l..(off + chunk.len()) * l].to_vec());
            let eval = loss.graph.forward(&TensorMap::from([("x".into(), x), ("eps".into(), e)]), params)?;
            let g = if grads { Some(loss.graph.backward(&eval, loss.total)?) } else { None };
            Ok::<_, crate::autodiff::AutodiffError>((eval.scalar(loss.recon), eval.scalar(loss.kl), eval.scalar(loss.total), g))
        });
        results.map(|rs| {
            let (mut recon, mut kl, mut total) = (0.0, 0.0, 0.0);
            let mut acc = TensorMap::new();
            for (r, k, t, g) in rs {
                recon += r;
                kl += k;
                total += t;
                for (name, t) in g.into_iter().flatten() {
                    match acc.get_mut(&name) {
                        Some(a) => a.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                        None => {
                            acc.insert(name, t);
                        }
                    }
                }
            }
            (recon, kl, total, acc)
        })
    };

    let mut rng = stream(config.seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut recon, mut kl, mut total) = (0.0, 0.0, 0.0);
        for (batch, members) in order.chunks(config.batch_size).enumerate() {
            let eps = standard_normals(&mut rng, members.len() * l);
            let diverged = || crate::model::ModelError::Diverged { epoch, batch };
            let (r, k, t, grads) = run(&params, members, &eps, true).map_err(|_| diverged())?;
            if !t.is_finite() {
                return Err(diverged().into());
            }
            adam_step(&mut params, &grads, &mut adam).map_err(|_| diverged())?;
            recon += r;
            kl += k;
            total += t;
        }
        let per = |v: f64| v / n as f64;
        trace.push(GridEpoch { epoch, loss: per(total), reconstruction: per(recon), kl: per(kl) });
    }
    let all: Vec<usize> = (0..n).collect();
    let (recon, _, _, _) = run(&params, &all, &vec![0.0; n * l], false).map_err(crate::model::ModelError::from)?;
    let reconstruction_mse = recon * scale * scale / (n * k) as f64;
    Ok(GridVaeOutcome { model: GridVae { grid, arch, params, value_scale: scale }, epochs: trace, reconstruction_mse })
}

/// Log posterior of `(z, log sigma)` given grid observations.
struct GridTarget {
    graph: Graph,
    nodes: [NodeId; 3],
    prior_start: usize,
    latent: usize,
    sigma: bool,
}

impl GridTarget {
    fn new(model: &GridVae, data: &ObservedData, noise: &NoiseModel) -> Result<Self, BaselineError> {
        if matches!(noise, NoiseModel::PoissonLgcp { .. }) {
            return Err(BaselineError::Config("the grid VAE supports Gaussian noise only".into()));
        }
        if data.values.len() != data.locations.len() || data.values.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::Data("need one finite value per location".into()));
        }
        let idx = model.grid_indices(&data.locations)?;
        let (k, l) = (model.grid.len(), model.arch.latent_dim);
        let sigma = noise.samples_sigma();
        let mut g = Graph::new();
        let theta = g.param("theta");
        let zero = g.constant(Tensor::scalar(0.0));
        let likelihood = if idx.is_empty() {
            zero
        } else {
            let z = g.slice_cols(theta, 0, l);
            let x_hat = decoder_graph(&mut g, &model.arch, z);
            // Observed grid columns through a 0/1 selection matrix.
            let mut sel = vec![0.0; k * idx.len()];
            for (j, &kk) in idx.iter().enumerate() {
                sel[kk * idx.len() + j] = 1.0;
            }
            let sel = g.constant(Tensor::matrix(k, idx.len(), sel));
            let picked = g.matmul(x_hat, sel);
            let mean = g.scale(picked, model.value_scale);
            let y = g.constant(Tensor::row(data.values.clone()));
            let log_sd = noise_log_sd(&mut g, theta, l, noise);
            g.gaussian_log_density(y, mean, log_sd)
        };
        let likelihood = g.label(likelihood, "likelihood");
        g.freeze(&model.params);
        let prior_start = g.len();
        let prior = latent_prior(&mut g, theta, l, noise);
        let total = g.add(likelihood, prior);
        Ok(Self { graph: g, nodes: [likelihood, prior, total], prior_start, latent: l, sigma })
    }

    fn evaluate(&self, theta: &[f64]) -> Result<LogPosteriorValue, BaselineError> {
        Ok(evaluate_split(&self.graph, self.prior_start, self.nodes, theta)?)
    }
}

impl LogDensityTarget for GridTarget {
    fn dim(&self) -> usize {
        self.latent + usize::from(self.sigma)
    }

    fn log_density(&self, x: &[f64]) -> Result<(f64, Vec<f64>), String> {
        self.evaluate(x).map(|v| (v.total, v.gradient)).map_err(|e| e.to_string())
    }
}

/// Posterior draws for the grid VAE.
#[derive(Clone, Debug)]
pub struct GridPosterior {
    pub chains: ChainSet,
    pub diagnostics: Diagnostics,
    pub model: GridVae,
    pub noise: NoiseModel,
}

impl GridPosterior {
    /// Epistemic summary at every grid point from every `stride`-th draw.
    pub fn predict(&self, stride: usize) -> Result<Vec<Summary>, BaselineError> {
        let l = self.model.latent_dim();
        let draws: Vec<Vec<f64>> = self
            .chains
            .draws
            .iter()
            .flat_map(|c| c.iter().step_by(stride.max(1)))
            .map(|d| self.model.decode(&d[..l]))
            .collect::<Result<_, _>>()?;
        Ok((0..self.model.grid.len()).map(|k| summarize(&draws.iter().map(|d| d[k]).collect::<Vec<_>>())).collect())
    }
}

/// HMC over the latent of a grid VAE given observations at grid points, in
/// grid order. Any other location, or the grid permuted, is rejected.
pub fn infer_grid_vae(
    model: &GridVae,
    data: &ObservedData,
    noise: &NoiseModel,
    config: &InferConfig,
) -> Result<GridPosterior, BaselineError> {
    noise.check()?;
    let target = GridTarget::new(model, data, noise)?;
    let dim = target.dim();
    let centre: Vec<f64> = (0..dim).map(|i| if i < target.latent { 0.0 } else { noise.initial_log_sigma() }).collect();
    let jitter = config.init_jitter.max(0.0);
    let inits: Vec<Vec<f64>> = (0..config.hmc.chains)
        .map(|c| {
            let e = standard_normals(&mut stream(config.hmc.seed ^ 0x5eed_1417, c as u64), dim);
            centre.iter().zip(e).map(|(m, e)| m + jitter * e).collect()
        })
        .collect();
    let mut chains = hmc_sample(&target, &config.hmc, Some(&inits))?;
    chains.names = (0..target.latent).map(|i| format!("z{i}")).chain(target.sigma.then(|| "log_sigma".to_string())).collect();
    let diagnostics = Diagnostics::compute(&chains, config.rhat_bar)?;
    Ok(GridPosterior { chains, diagnostics, model: model.clone(), noise: noise.clone() })
}
