use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, adam_update, Activation, AdamConfig, AdamState, Tensor, TensorMap};
use crate::linalg::{cholesky_with_jitter, cholesky_solve};
use crate::priors::{collect_indexed, FunctionDraw, PriorDataset};
use crate::rng::{standard_normals, stream};

use super::loss::batch_inputs;
use super::{phi_graph, Architecture, LossGraph, LossParts, ModelError, PiVaeModel};

/// Functions per gradient work unit. Fixed, so summation order (and therefore
/// every bit of the result) does not depend on the thread count.
const CHUNK: usize = 16;

/// Stage-one hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub features: usize,
    pub centres: usize,
    pub phi_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimiser for the shared networks.
    pub adam: AdamConfig,
    /// Learning rate for the per-function weights.
    pub beta_lr: f64,
    pub kl_weight: f64,
    /// Ridge penalty for the least-squares initialisation of each `beta_i`.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            features: 20,
            centres: 32,
            phi_hidden: vec![20, 20],
            encoder_hidden: vec![64, 32],
            decoder_hidden: vec![32, 64],
            activation: Activation::Tanh,
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            beta_lr: 1e-2,
            kl_weight: 1.0,
            ridge: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self, input_dim: usize, channels: usize) -> Architecture {
        Architecture {
            input_dim,
            features: self.features,
            latent_dim: self.latent_dim,
            channels,
            centres: self.centres,
            phi_hidden: self.phi_hidden.clone(),
            encoder_hidden: self.encoder_hidden.clone(),
            decoder_hidden: self.decoder_hidden.clone(),
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.adam.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.beta_lr > 0.0 && self.kl_weight >= 0.0 && self.ridge >= 0.0) {
            return Err(ModelError::Config("beta_lr must be positive, kl_weight and ridge non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean objective per function.
    pub loss: f64,
    pub beta: f64,
    pub decoder: f64,
    pub kl: f64,
}

/// What training did, for the JSON report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub architecture: Architecture,
    pub value_scale: Vec<f64>,
    pub functions: usize,
    pub epochs: Vec<EpochLoss>,
    pub final_loss: f64,
    /// Mean squared error of `d(z_mu)^T Phi(s)` against the targets, in scaled units.
    pub reconstruction_mse: f64,
}

pub struct TrainOutcome {
    pub model: PiVaeModel,
    pub report: TrainReport,
    /// Final per-function weights, one row per training draw.
    pub betas: Vec<Vec<f64>>,
}

fn value_scale(dataset: &PriorDataset) -> Vec<f64> {
    let ch = dataset.channels().count();
    (0..ch)
        .map(|c| {
            let (mut ss, mut n) = (0.0, 0usize);
            for d in dataset.draws() {
                for k in 0..d.len() {
                    ss += d.target(c, k).powi(2);
                    n += 1;
                }
            }
            let rms = (ss / n as f64).sqrt();
            if rms > 0.0 && rms.is_finite() {
                rms
            } else {
                1.0
            }
        })
        .collect()
}

/// Ridge least squares `beta_c = argmin |x_c/scale_c - Phi beta_c|^2 + ridge |beta_c|^2`.
fn init_beta(phi: &Tensor, draw: &FunctionDraw, scale: &[f64], ridge: f64) -> Vec<f64> {
    let (n, f) = (phi.rows(), phi.cols());
    let p = phi.data();
    let mut gram = vec![0.0; f * f];
    for i in 0..n {
        let row = &p[i * f..(i + 1) * f];
        for a in 0..f {
            for b in 0..f {
                gram[a * f + b] += row[a] * row[b];
            }
        }
    }
    let trace = (0..f).map(|a| gram[a * f + a]).sum::<f64>() / f as f64;
    for a in 0..f {
        gram[a * f + a] += ridge * trace.max(1e-12);
    }
    let factor = match cholesky_with_jitter(&gram, f, 1e-10 * trace.max(1.0), 6) {
        Ok((l, _)) => l,
        Err(_) => return vec![0.0; f * scale.len()],
    };
    let mut beta = Vec::with_capacity(f * scale.len());
    for (c, sc) in scale.iter().enumerate() {
        let mut rhs = vec![0.0; f];
        for i in 0..n {
            let x = draw.target(c, i) / sc;
            for (r, &v) in rhs.iter_mut().zip(&p[i * f..(i + 1) * f]) {
                *r += v * x;
            }
        }
        beta.extend(cholesky_solve(&factor, f, &rhs));
    }
    beta
}

fn phi_rows(arch: &Architecture, params: &TensorMap, draw: &FunctionDraw) -> Result<Tensor, ModelError> {
    let mut g = crate::autodiff::Graph::new();
    let s = g.input("s");
    let phi = phi_graph(&mut g, arch, s);
    let eval = g.forward(&TensorMap::from([("s".into(), Tensor::from_rows(&draw.locations))]), params)?;
    Ok(eval.value(phi).clone())
}

/// One gradient evaluation over `members`, split into fixed chunks.
fn batch_gradient(
    loss: &LossGraph,
    arch: &Architecture,
    params: &TensorMap,
    draws: &[FunctionDraw],
    members: &[usize],
    betas: &[Vec<f64>],
    eps: &[f64],
    scale: &[f64],
    grads: bool,
) -> Result<(LossParts, TensorMap, Vec<Vec<f64>>), ModelError> {
    let l = arch.latent_dim;
    let chunks: Vec<&[usize]> = members.chunks(CHUNK).collect();
    let results = collect_indexed(chunks.len(), |ci| {
        let chunk = chunks[ci];
        let offset = ci * CHUNK;
        let refs: Vec<&FunctionDraw> = chunk.iter().map(|&i| &draws[i]).collect();
        let eps = Tensor::matrix(chunk.len(), l, eps[offset * l..(offset + chunk.len()) * l].to_vec());
        let inputs = batch_inputs(arch, &refs, eps, scale)?;
        let mut p = params.clone();
        p.insert("beta".into(), Tensor::from_rows(&chunk.iter().map(|&i| &betas[i][..]).collect::<Vec<_>>()));
        loss.evaluate(&p, &inputs, grads)
    })?;
    let mut parts = LossParts::default();
    let mut total = TensorMap::new();
    let mut beta_grads = Vec::with_capacity(members.len());
    for (p, g) in results {
        parts += p;
        let Some(mut g) = g else { continue };
        let bg = g.remove("beta").expect("beta gradient");
        beta_grads.extend(bg.data().chunks(arch.beta_len()).map(<[f64]>::to_vec));
        for (name, t) in g {
            match total.get_mut(&name) {
                Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                None => {
                    total.insert(name, t);
                }
            }
        }
    }
    Ok((parts, total, beta_grads))
}

/// Stage-one training: Adam on the shared networks and, in the same pass, on
/// each function's weight row. Minibatches are shuffled each epoch.
pub fn train_prior(dataset: &PriorDataset, config: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    let arch = config.architecture(dataset.input_dim(), dataset.channels().count());
    arch.validate()?;
    let draws = dataset.draws();
    let n = draws.len();
    let scale = value_scale(dataset);
    let mut params = arch.init_params(&dataset.bounding_box(), &mut stream(config.seed, 0));

    let mut betas = collect_indexed(n, |i| {
        let phi = phi_rows(&arch, &params, &draws[i])?;
        Ok::<_, ModelError>(init_beta(&phi, &draws[i], &scale, config.ridge))
    })?;

    let loss = LossGraph::new(&arch, config.kl_weight);
    let mut adam = AdamState::new(config.adam)?;
    let beta_cfg = AdamConfig { lr: config.beta_lr, ..config.adam };
    let fc = arch.beta_len();
    let mut beta_m = vec![vec![0.0; fc]; n];
    let mut beta_v = vec![vec![0.0; fc]; n];
    let mut beta_steps = vec![0u64; n];

    let mut rng = stream(config.seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_parts = LossParts::default();
        for (batch, members) in order.chunks(config.batch_size).enumerate() {
            let eps = standard_normals(&mut rng, members.len() * arch.latent_dim);
            let (parts, grads, beta_grads) =
                batch_gradient(&loss, &arch, &params, draws, members, &betas, &eps, &scale, true)
                    .map_err(|e| match e {
                        ModelError::Autodiff(_) => ModelError::Diverged { epoch, batch },
                        other => other,
                    })?;
            if !parts.total.is_finite() {
                return Err(ModelError::Diverged { epoch, batch });
            }
            adam_step(&mut params, &grads, &mut adam).map_err(|_| ModelError::Diverged { epoch, batch })?;
            for (&i, g) in members.iter().zip(&beta_grads) {
                beta_steps[i] += 1;
                adam_update(&mut betas[i], g, &mut beta_m[i], &mut beta_v[i], beta_steps[i], &beta_cfg);
            }
            epoch_parts += parts;
        }
        let per = |v: f64| v / n as f64;
        trace.push(EpochLoss {
            epoch,
            loss: per(epoch_parts.total),
            beta: per(epoch_parts.beta),
            decoder: per(epoch_parts.decoder),
            kl: per(epoch_parts.kl),
        });
    }

    // Decoder reconstruction at the encoder mean (eps = 0).
    let all: Vec<usize> = (0..n).collect();
    let zeros = vec![0.0; n * arch.latent_dim];
    let (parts, _, _) = batch_gradient(&loss, &arch, &params, draws, &all, &betas, &zeros, &scale, false)?;
    let points: usize = draws.iter().map(FunctionDraw::len).sum();
    let reconstruction_mse = parts.decoder / (points * arch.channels) as f64;

    let final_loss = trace.last().map(|e| e.loss).unwrap_or(f64::NAN);
    let report = TrainReport {
        config: config.clone(),
        seed: config.seed,
        architecture: arch.clone(),
        value_scale: scale.clone(),
        functions: n,
        epochs: trace,
        final_loss,
        reconstruction_mse,
    };
    let model = PiVaeModel::new(arch, params, scale)?;
    Ok(TrainOutcome { model, report, betas })
}
