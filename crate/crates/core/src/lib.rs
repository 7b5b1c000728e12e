//! Prior-encoding variational autoencoders.
//!
//! Stage one trains a VAE on draws from a stochastic-process prior. Each draw is
//! represented by linear weights over a shared feature map of the inputs, and the
//! autoencoder compresses those weights into a low-dimensional Gaussian latent.
//! Stage two freezes the decoder and feature map and runs Hamiltonian Monte Carlo
//! over the latent to condition on new data.
//!
//! Modules, bottom up:
//!
//! - [`autodiff`]: reverse-mode gradients and Adam.
//! - [`priors`]: Gaussian-process, cubic and log-Gaussian Cox process samplers.
//! - [`model`]: the feature map, encoder, decoder, loss and training loop.
//! - [`mcmc`]: HMC with warmup adaptation, split R-hat, ESS.
//! - [`inference`]: latent posteriors, prediction and point estimates.
//! - [`baselines`]: exact GP regression and a fixed-grid VAE.
//! - [`benchmark`]: train/test comparison against the exact GP.
//! - [`formats`]: the on-disk artifacts (JSON-lines datasets, CSVs).
//! - [`metrics`]: error and predictive-density summaries.

pub mod autodiff;
pub mod baselines;
pub mod benchmark;
pub mod formats;
pub mod inference;
pub mod linalg;
pub mod mcmc;
pub mod metrics;
pub mod model;
pub mod priors;
pub mod rng;

pub use autodiff::{Tensor, TensorMap};

pub use inference::{LatentPosterior, NoiseModel, ObservedData};
pub use model::{PiVaeModel, TrainConfig};
pub use priors::{KernelFamily, KernelSpec, PriorDataset};

/// Version stamped into every artifact this crate writes.
pub const FORMAT_VERSION: u32 = 1;
