//! Comparison methods: exact GP regression and a VAE over a fixed grid.

mod gp;
mod grid_vae;

pub use gp::{gp_fit_predict, optimize_gp, GpFit, GpOptConfig, GpOutput, GpRegressor};
pub use grid_vae::{infer_grid_vae, train_grid_vae, GridPosterior, GridVae, GridVaeConfig, GridVaeOutcome};

use crate::inference::InferenceError;
use crate::linalg::LinalgError;
use crate::mcmc::McmcError;
use crate::model::ModelError;
use crate::priors::PriorError;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("GP covariance is not positive definite: {0}")]
    Cholesky(#[from] LinalgError),
    #[error(transparent)]
    Kernel(#[from] PriorError),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A plain VAE only knows its training grid, in training order.
    #[error("location {index} is not on the training grid in grid order; a grid VAE cannot condition on other locations")]
    OffGrid { index: usize },
    #[error("draws do not share one grid (draw {id} differs)")]
    HeterogeneousGrid { id: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}
