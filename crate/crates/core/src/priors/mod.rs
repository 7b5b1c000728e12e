//! Samplers for the stage-one training corpora.

mod cubic;
mod dataset;
mod gp;
mod kernel;
mod lgcp;

pub use cubic::{sample_cubic, sample_cubic_coefficients, Cubic, CubicConfig};
pub use dataset::{
    build_prior_dataset, log_uniform, Channels, FamilyName, FunctionDraw, GpPriorConfig, PriorConfig, PriorDataset,
};
pub(crate) use dataset::collect_indexed;
pub use gp::{sample_gp, JITTER_RETRIES};
pub use kernel::{kernel_eval, KernelFamily, KernelSpec};
pub(crate) use kernel::euclidean;
pub use lgcp::{sample_lgcp, LgcpConfig, LgcpDraw, LgcpSampler, MIN_RESOLUTION};

use crate::linalg::LinalgError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PriorError {
    #[error("invalid kernel {0:?}: lengthscale, amplitude and jitter must be positive")]
    InvalidKernel(KernelSpec),
    #[error("kernel distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("no locations to sample at")]
    NoLocations,
    #[error("locations must be finite")]
    NonFiniteLocation,
    #[error("covariance factorisation failed: {0}")]
    Cholesky(#[from] LinalgError),
    #[error("no monotone cubic after {attempts} attempts; widen the coefficient ranges")]
    RejectionBudget { attempts: usize },
    #[error("invalid range for `{field}`: {range:?}")]
    InvalidRange { field: String, range: [f64; 2] },
    #[error("`{field}` must be positive")]
    InvalidCount { field: String },
    #[error("missing `[prior.{0}]` section")]
    MissingSection(&'static str),
    #[error("degenerate horizon {0}")]
    DegenerateHorizon(f64),
    #[error("grid resolution {0} is below the minimum of 256 cells")]
    Resolution(usize),
    #[error("intensity overflowed (non-finite exp of the latent GP)")]
    IntensityOverflow,
    #[error("invalid LGCP configuration: {0}")]
    InvalidLgcp(String),
    #[error("dataset has no draws")]
    EmptyDataset,
    #[error("draw {0} has no locations")]
    EmptyDraw(usize),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}
