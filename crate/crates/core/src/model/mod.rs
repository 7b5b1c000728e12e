//! The prior-encoding autoencoder: shared feature map, per-function linear
//! weights, encoder and decoder, plus stage-one training.
//!
//! A trained model defines the random function `f(s) = d(z)^T Phi(s)` with
//! `z ~ N(0, I)`. Every location is pushed through `Phi` on its own, so values
//! at a location never depend on which other locations are evaluated with it.

mod io;
mod loss;
mod network;
mod train;

pub use io::{load_model, read_model, save_model, write_model, MAGIC};
pub use loss::{pivae_loss, pivae_loss_gradients, LossParts};
pub use train::{train_prior, EpochLoss, TrainConfig, TrainOutcome, TrainReport};

pub(crate) use loss::LossGraph;
pub(crate) use network::{decoder_graph, encoder_graph, phi_graph};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AutodiffError, Graph, Tensor, TensorMap};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("dataset does not fit the model: {0}")]
    Dataset(String),
    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("not a model file: {0}")]
    Format(String),
    #[error("model file format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("model file is truncated")]
    Truncated,
    #[error("no locations given")]
    NoLocations,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Layer sizes. `channels` is 1 for value-only priors and 2 for
/// value-plus-integral priors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub features: usize,
    pub latent_dim: usize,
    pub channels: usize,
    pub centres: usize,
    pub phi_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Architecture {
    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [self.input_dim, self.features, self.latent_dim, self.channels, self.centres];
        let hidden = self.phi_hidden.iter().chain(&self.encoder_hidden).chain(&self.decoder_hidden);
        if sizes.contains(&0) || hidden.into_iter().any(|&w| w == 0) {
            return Err(ModelError::Config(format!("all layer sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// A trained, immutable model.
#[derive(Clone, Debug, PartialEq)]
pub struct PiVaeModel {
    arch: Architecture,
    params: TensorMap,
    /// Per-channel output scale: the networks work on targets divided by this.
    value_scale: Vec<f64>,
}

impl PiVaeModel {
    /// Checks every parameter against the architecture.
    pub fn new(arch: Architecture, params: TensorMap, value_scale: Vec<f64>) -> Result<Self, ModelError> {
        arch.validate()?;
        if value_scale.len() != arch.channels {
            return Err(ModelError::Dimension { what: "value scale", expected: arch.channels, got: value_scale.len() });
        }
        if value_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(ModelError::Config(format!("value scales must be positive: {value_scale:?}")));
        }
        let shapes = arch.param_shapes();
        if params.len() != shapes.len() {
            return Err(ModelError::Config(format!("expected {} parameter tensors, got {}", shapes.len(), params.len())));
        }
        for (name, r, c) in &shapes {
            let t = params.get(name).ok_or_else(|| ModelError::Config(format!("missing parameter `{name}`")))?;
            if t.dims() != Some((*r, *c)) {
                return Err(ModelError::Config(format!("`{name}` has shape {:?}, expected {r}x{c}", t.shape())));
            }
            if !t.all_finite() {
                return Err(ModelError::Config(format!("`{name}` has non-finite entries")));
            }
        }
        Ok(Self { arch, params, value_scale })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &TensorMap {
        &self.params
    }

    pub fn value_scale(&self) -> &[f64] {
        &self.value_scale
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn channels(&self) -> usize {
        self.arch.channels
    }

    pub(crate) fn locations_tensor(&self, locations: &[Vec<f64>]) -> Result<Tensor, ModelError> {
        let d = self.arch.input_dim;
        for loc in locations {
            if loc.len() != d {
                return Err(ModelError::Dimension { what: "location", expected: d, got: loc.len() });
            }
        }
        Ok(Tensor::from_rows(locations))
    }

    /// Feature vectors, one row of length `F` per location.
    pub fn phi(&self, locations: &[Vec<f64>]) -> Result<Tensor, ModelError> {
        if locations.is_empty() {
            return Err(ModelError::NoLocations);
        }
        let s = self.locations_tensor(locations)?;
        let mut g = Graph::new();
        let sn = g.input("s");
        let phi = phi_graph(&mut g, &self.arch, sn);
        let eval = g.forward(&TensorMap::from([("s".into(), s)]), &self.params)?;
        Ok(eval.value(phi).clone())
    }

    /// `beta^T Phi(s)` per channel, scaled to data units: one `C`-vector per
    /// location. `beta` holds `C` consecutive blocks of length `F`.
    pub fn reconstruct(&self, beta: &[f64], locations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        let fc = self.arch.beta_len();
        if beta.len() != fc {
            return Err(ModelError::Dimension { what: "beta", expected: fc, got: beta.len() });
        }
        if locations.is_empty() {
            return Ok(Vec::new());
        }
        let phi = self.phi(locations)?;
        let flat = self.readout(&phi, beta);
        Ok(flat.chunks(self.arch.channels).map(<[f64]>::to_vec).collect())
    }

    /// Row-major `n x C` readout of precomputed features.
    pub(crate) fn readout(&self, phi: &Tensor, beta: &[f64]) -> Vec<f64> {
        let (f, ch) = (self.arch.features, self.arch.channels);
        let mut out = Vec::with_capacity(phi.rows() * ch);
        for i in 0..phi.rows() {
            let row = phi.row_slice(i);
            for c in 0..ch {
                let dot: f64 = row.iter().zip(&beta[c * f..(c + 1) * f]).map(|(a, b)| a * b).sum();
                out.push(dot * self.value_scale[c]);
            }
        }
        out
    }

    /// `(z_mu, z_sd)` for one weight vector.
    pub fn encode(&self, beta: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let fc = self.arch.beta_len();
        if beta.len() != fc {
            return Err(ModelError::Dimension { what: "beta", expected: fc, got: beta.len() });
        }
        let mut g = Graph::new();
        let b = g.input("beta");
        let (mu, log_sd) = encoder_graph(&mut g, &self.arch, b);
        let sd = g.exp(log_sd);
        let eval = g.forward(&TensorMap::from([("beta".into(), Tensor::row(beta.to_vec()))]), &self.params)?;
        Ok((eval.value(mu).data().to_vec(), eval.value(sd).data().to_vec()))
    }

    /// `beta_hat = d(z)`, of length `F * C`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, ModelError> {
        let l = self.arch.latent_dim;
        if z.len() != l {
            return Err(ModelError::Dimension { what: "latent", expected: l, got: z.len() });
        }
        let mut g = Graph::new();
        let zn = g.input("z");
        let out = decoder_graph(&mut g, &self.arch, zn);
        let eval = g.forward(&TensorMap::from([("z".into(), Tensor::row(z.to_vec()))]), &self.params)?;
        Ok(eval.value(out).data().to_vec())
    }

    /// `f(s) = d(z)^T Phi(s)` at every location, one `C`-vector per location.
    pub fn evaluate(&self, z: &[f64], locations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        let beta = self.decode(z)?;
        self.reconstruct(&beta, locations)
    }
}

#[cfg(test)]
mod tests;
