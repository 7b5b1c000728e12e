use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Rng};

use super::cubic::{sample_cubic, CubicConfig};
use super::gp::sample_gp;
use super::lgcp::{LgcpConfig, LgcpSampler};
use super::{KernelFamily, KernelSpec, PriorError};

/// One function evaluated at `K` locations.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionDraw {
    pub id: usize,
    pub locations: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Running integral at each location (point-process priors only).
    pub integral: Option<Vec<f64>>,
}

impl FunctionDraw {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Target for output channel `c` at point `k`.
    pub fn target(&self, c: usize, k: usize) -> f64 {
        match c {
            0 => self.values[k],
            _ => self.integral.as_ref().expect("channel missing")[k],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channels {
    Value,
    ValueIntegral,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Value => 1,
            Channels::ValueIntegral => 2,
        }
    }
}

/// Training corpus for stage one.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorDataset {
    draws: Vec<FunctionDraw>,
    input_dim: usize,
    channels: Channels,
}

impl PriorDataset {
    /// Validates that draws are nonempty, finite and share `D` and channels.
    pub fn new(draws: Vec<FunctionDraw>) -> Result<Self, PriorError> {
        let first = draws.first().ok_or(PriorError::EmptyDataset)?;
        let input_dim = first.locations.first().map(|l| l.len()).ok_or(PriorError::EmptyDraw(first.id))?;
        let channels = if first.integral.is_some() { Channels::ValueIntegral } else { Channels::Value };
        for d in &draws {
            if d.locations.is_empty() {
                return Err(PriorError::EmptyDraw(d.id));
            }
            if d.values.len() != d.locations.len()
                || d.integral.as_ref().is_some_and(|i| i.len() != d.locations.len())
            {
                return Err(PriorError::Inconsistent(format!("draw {} has mismatched lengths", d.id)));
            }
            if d.integral.is_some() != (channels == Channels::ValueIntegral) {
                return Err(PriorError::Inconsistent(format!("draw {} has different channels", d.id)));
            }
            if d.locations.iter().any(|l| l.len() != input_dim) {
                return Err(PriorError::Inconsistent(format!("draw {} has a location not in R^{input_dim}", d.id)));
            }
            let finite = d.locations.iter().flatten().chain(&d.values).chain(d.integral.iter().flatten());
            if finite.into_iter().any(|v| !v.is_finite()) {
                return Err(PriorError::Inconsistent(format!("draw {} has non-finite entries", d.id)));
            }
        }
        Ok(Self { draws, input_dim, channels })
    }

    pub fn draws(&self) -> &[FunctionDraw] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    /// Axis-aligned bounding box of all locations, `(min, max)` per dimension.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        let mut bbox = vec![(f64::INFINITY, f64::NEG_INFINITY); self.input_dim];
        for loc in self.draws.iter().flat_map(|d| &d.locations) {
            for (b, &x) in bbox.iter_mut().zip(loc) {
                b.0 = b.0.min(x);
                b.1 = b.1.max(x);
            }
        }
        bbox
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Gp,
    Cubic,
    Lgcp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpPriorConfig {
    pub kernel: KernelFamily,
    /// Each draw gets a lengthscale sampled log-uniformly from this range.
    pub lengthscale_range: [f64; 2],
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn one() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    1e-6
}
fn default_box() -> [f64; 2] {
    [-1.0, 1.0]
}

/// Which prior to sample and how much of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub family: FamilyName,
    pub n_functions: usize,
    /// Locations per draw; for `lgcp` this is ignored in favour of the event count.
    #[serde(default)]
    pub n_locations: usize,
    #[serde(default = "one_usize")]
    pub input_dim: usize,
    /// Locations are uniform on `[lo, hi]^D`.
    #[serde(default = "default_box")]
    pub location_box: [f64; 2],
    #[serde(default)]
    pub gp: Option<GpPriorConfig>,
    #[serde(default)]
    pub cubic: Option<CubicConfig>,
    #[serde(default)]
    pub lgcp: Option<LgcpConfig>,
}

fn one_usize() -> usize {
    1
}

impl PriorConfig {
    pub fn gp(kernel: KernelFamily, lengthscale_range: [f64; 2], n_functions: usize, n_locations: usize) -> Self {
        Self {
            family: FamilyName::Gp,
            n_functions,
            n_locations,
            input_dim: 1,
            location_box: default_box(),
            gp: Some(GpPriorConfig { kernel, lengthscale_range, amplitude: 1.0, jitter: default_jitter() }),
            cubic: None,
            lgcp: None,
        }
    }

    pub fn cubic(config: CubicConfig, n_functions: usize, n_locations: usize) -> Self {
        Self {
            family: FamilyName::Cubic,
            n_functions,
            n_locations,
            input_dim: 1,
            location_box: config.interval,
            gp: None,
            cubic: Some(config),
            lgcp: None,
        }
    }

    pub fn lgcp(config: LgcpConfig, n_functions: usize) -> Self {
        Self {
            family: FamilyName::Lgcp,
            n_functions,
            n_locations: config.target_events.unwrap_or(0),
            input_dim: 1,
            location_box: [0.0, config.horizon],
            gp: None,
            cubic: None,
            lgcp: Some(config),
        }
    }

    pub fn with_input_dim(self, input_dim: usize) -> Self {
        Self { input_dim, ..self }
    }

    pub fn with_box(self, location_box: [f64; 2]) -> Self {
        Self { location_box, ..self }
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let invalid = |field: &str, range: [f64; 2]| PriorError::InvalidRange { field: field.into(), range };
        if self.n_functions == 0 {
            return Err(PriorError::InvalidCount { field: "n_functions".into() });
        }
        match self.family {
            FamilyName::Gp => {
                let gp = self.gp.as_ref().ok_or(PriorError::MissingSection("gp"))?;
                let [lo, hi] = gp.lengthscale_range;
                if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(invalid("gp.lengthscale_range", gp.lengthscale_range));
                }
                KernelSpec { family: gp.kernel, lengthscale: lo, amplitude: gp.amplitude, jitter: gp.jitter }
                    .validate()?;
                let [a, b] = self.location_box;
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(invalid("location_box", self.location_box));
                }
                if self.n_locations == 0 {
                    return Err(PriorError::InvalidCount { field: "n_locations".into() });
                }
                if self.input_dim == 0 {
                    return Err(PriorError::InvalidCount { field: "input_dim".into() });
                }
            }
            FamilyName::Cubic => {
                self.cubic.as_ref().ok_or(PriorError::MissingSection("cubic"))?.validate()?;
                if self.input_dim != 1 {
                    return Err(PriorError::Inconsistent("cubic priors are one-dimensional".into()));
                }
                if self.n_locations == 0 {
                    return Err(PriorError::InvalidCount { field: "n_locations".into() });
                }
            }
            FamilyName::Lgcp => {
                let lgcp = self.lgcp.as_ref().ok_or(PriorError::MissingSection("lgcp"))?;
                lgcp.validate()?;
                if self.input_dim != 1 {
                    return Err(PriorError::Inconsistent("lgcp priors are one-dimensional".into()));
                }
            }
        }
        Ok(())
    }
}

/// Log-uniform sample from `[lo, hi]`.
pub fn log_uniform(rng: &mut Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp().clamp(lo, hi)
}

fn uniform_locations(rng: &mut Rng, k: usize, d: usize, [lo, hi]: [f64; 2]) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..d).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

/// Draws `n_functions` independent functions. Draw `i` uses random stream
/// `(seed, i)`, so the result does not depend on thread count.
pub fn build_prior_dataset(config: &PriorConfig, seed: u64) -> Result<PriorDataset, PriorError> {
    config.validate()?;
    let lgcp = match config.family {
        FamilyName::Lgcp => Some(LgcpSampler::new(config.lgcp.clone().expect("validated"))?),
        _ => None,
    };
    let one = |i: usize| -> Result<FunctionDraw, PriorError> {
        let mut rng = stream(seed, i as u64);
        match config.family {
            FamilyName::Gp => {
                let gp = config.gp.as_ref().expect("validated");
                let spec = KernelSpec {
                    family: gp.kernel,
                    lengthscale: log_uniform(&mut rng, gp.lengthscale_range),
                    amplitude: gp.amplitude,
                    jitter: gp.jitter,
                };
                let locations = uniform_locations(&mut rng, config.n_locations, config.input_dim, config.location_box);
                let values = sample_gp(&spec, &locations, &mut rng)?;
                Ok(FunctionDraw { id: i, locations, values, integral: None })
            }
            FamilyName::Cubic => {
                sample_cubic(&mut rng, config.cubic.as_ref().expect("validated"), i, config.n_locations)
            }
            FamilyName::Lgcp => {
                let sampler = lgcp.as_ref().expect("built above");
                // A draw with no events carries no training signal; resample.
                for _ in 0..100 {
                    let draw = sampler.sample(&mut rng)?;
                    if draw.events.is_empty() {
                        continue;
                    }
                    let values = draw.events.iter().map(|&t| draw.log_intensity_at(t)).collect();
                    let integral = draw.events.iter().map(|&t| draw.integral_at(t)).collect();
                    let locations = draw.events.iter().map(|&t| vec![t]).collect();
                    return Ok(FunctionDraw { id: i, locations, values, integral: Some(integral) });
                }
                Err(PriorError::InvalidLgcp("no events in 100 consecutive draws".into()))
            }
        }
    };
    let draws = collect_indexed(config.n_functions, one)?;
    PriorDataset::new(draws)
}

#[cfg(feature = "parallel")]
pub(crate) fn collect_indexed<T: Send, E: Send>(
    n: usize,
    f: impl Fn(usize) -> Result<T, E> + Sync + Send,
) -> Result<Vec<T>, E> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn collect_indexed<T, E>(n: usize, f: impl Fn(usize) -> Result<T, E>) -> Result<Vec<T>, E> {
    (0..n).map(f).collect()
}
