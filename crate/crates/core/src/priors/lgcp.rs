use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky_with_jitter, lower_mul};
use crate::rng::{standard_normals, Rng};

use super::gp::JITTER_RETRIES;
use super::{KernelSpec, PriorError};

/// One-dimensional log-Gaussian Cox process on `[0, T]`.
///
/// The latent GP is drawn exactly at `knots + 1` evenly spaced points and
/// interpolated linearly onto the `resolution`-cell integration grid. Intensity
/// is `exp` of the interpolated values, so on each grid cell it is log-linear and
/// its maximum sits on a grid node, which makes the thinning bound exact.
///
/// When `target_events` is set, the path and a dominating Poisson process are
/// drawn once on `[0, horizon_cap * horizon]` and the horizon is rescaled by
/// `target / realised` between retries until the count matches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LgcpConfig {
    pub kernel: KernelSpec,
    /// Constant mean of the log intensity.
    #[serde(default)]
    pub mean: f64,
    /// Initial horizon `T`.
    pub horizon: f64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_knots")]
    pub knots: usize,
    #[serde(default)]
    pub target_events: Option<usize>,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    /// Largest horizon considered, as a multiple of `horizon`.
    #[serde(default = "default_cap")]
    pub horizon_cap: f64,
}

fn default_resolution() -> usize {
    4096
}
fn default_knots() -> usize {
    256
}
fn default_retries() -> usize {
    20
}
fn default_cap() -> f64 {
    4.0
}

pub const MIN_RESOLUTION: usize = 256;

impl LgcpConfig {
    pub fn new(kernel: KernelSpec, mean: f64, horizon: f64) -> Self {
        Self {
            kernel,
            mean,
            horizon,
            resolution: default_resolution(),
            knots: default_knots(),
            target_events: None,
            max_retries: default_retries(),
            horizon_cap: default_cap(),
        }
    }

    pub fn with_target(self, events: usize) -> Self {
        Self { target_events: Some(events), ..self }
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        self.kernel.validate()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(PriorError::DegenerateHorizon(self.horizon));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(PriorError::Resolution(self.resolution));
        }
        if self.knots == 0 || !self.mean.is_finite() || !(self.horizon_cap >= 1.0) {
            return Err(PriorError::InvalidLgcp(format!(
                "knots={} mean={} horizon_cap={}",
                self.knots, self.mean, self.horizon_cap
            )));
        }
        if self.target_events == Some(0) {
            return Err(PriorError::InvalidLgcp("target_events must be positive".into()));
        }
        Ok(())
    }

    fn cap(&self) -> f64 {
        if self.target_events.is_some() {
            self.horizon * self.horizon_cap
        } else {
            self.horizon
        }
    }
}

/// A sampled intensity, its running integral, and the events on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LgcpDraw {
    pub horizon: f64,
    /// Increasing grid from 0 to `horizon` inclusive.
    pub grid: Vec<f64>,
    pub log_intensity: Vec<f64>,
    pub intensity: Vec<f64>,
    /// Trapezoid integral of the intensity from 0 to each grid point.
    pub cumulative: Vec<f64>,
    pub events: Vec<f64>,
}

impl LgcpDraw {
    fn cell(&self, t: f64) -> usize {
        match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.grid.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.grid.len() - 2),
        }
    }

    pub fn log_intensity_at(&self, t: f64) -> f64 {
        let i = self.cell(t);
        lerp(self.grid[i], self.grid[i + 1], self.log_intensity[i], self.log_intensity[i + 1], t)
    }

    pub fn intensity_at(&self, t: f64) -> f64 {
        self.log_intensity_at(t).exp()
    }

    /// Running integral at `t`, consistent with the trapezoid grid values.
    pub fn integral_at(&self, t: f64) -> f64 {
        let i = self.cell(t);
        self.cumulative[i] + 0.5 * (t - self.grid[i]) * (self.intensity[i] + self.intensity_at(t))
    }

    pub fn total_integral(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }
}

fn lerp(x0: f64, x1: f64, y0: f64, y1: f64, x: f64) -> f64 {
    if x1 == x0 {
        return y0;
    }
    let w = (x - x0) / (x1 - x0);
    y0 + w * (y1 - y0)
}

/// Reusable sampler: the knot covariance factor depends only on the config.
#[derive(Clone, Debug)]
pub struct LgcpSampler {
    config: LgcpConfig,
    cap: f64,
    knot_factor: Vec<f64>,
}

impl LgcpSampler {
    pub fn new(config: LgcpConfig) -> Result<Self, PriorError> {
        config.validate()?;
        let cap = config.cap();
        let n = config.knots + 1;
        let knots: Vec<Vec<f64>> = (0..n).map(|i| vec![cap * i as f64 / config.knots as f64]).collect();
        let k = config.kernel.gram(&knots);
        let (knot_factor, _) = cholesky_with_jitter(&k, n, config.kernel.jitter, JITTER_RETRIES)?;
        Ok(Self { config, cap, knot_factor })
    }

    pub fn config(&self) -> &LgcpConfig {
        &self.config
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<LgcpDraw, PriorError> {
        let cfg = &self.config;
        let n_knots = cfg.knots + 1;
        let z = standard_normals(rng, n_knots);
        let knot_vals: Vec<f64> = lower_mul(&self.knot_factor, n_knots, &z).into_iter().map(|v| v + cfg.mean).collect();
        let knot_step = self.cap / cfg.knots as f64;

        let res = cfg.resolution;
        let grid: Vec<f64> = (0..=res).map(|i| self.cap * i as f64 / res as f64).collect();
        let log_intensity: Vec<f64> = grid
            .iter()
            .map(|&t| {
                let j = ((t / knot_step).floor() as usize).min(cfg.knots - 1);
                lerp(j as f64 * knot_step, (j + 1) as f64 * knot_step, knot_vals[j], knot_vals[j + 1], t)
            })
            .collect();
        let intensity: Vec<f64> = log_intensity.iter().map(|g| g.exp()).collect();
        if intensity.iter().any(|l| !l.is_finite()) {
            return Err(PriorError::IntensityOverflow);
        }
        let mut cumulative = Vec::with_capacity(grid.len());
        cumulative.push(0.0);
        for i in 1..grid.len() {
            let prev = cumulative[i - 1];
            cumulative.push(prev + 0.5 * (grid[i] - grid[i - 1]) * (intensity[i] + intensity[i - 1]));
        }
        let full = LgcpDraw { horizon: self.cap, grid, log_intensity, intensity, cumulative, events: vec![] };

        // Thinning against the grid maximum.
        let lambda_max = full.intensity.iter().cloned().fold(0.0, f64::max);
        let mean_count = lambda_max * self.cap;
        let n_dom = if mean_count > 0.0 {
            Poisson::new(mean_count).map_err(|_| PriorError::IntensityOverflow)?.sample(rng) as usize
        } else {
            0
        };
        let mut dominating: Vec<(f64, f64)> =
            (0..n_dom).map(|_| (rng.random_range(0.0..self.cap), rng.random::<f64>())).collect();
        dominating.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let accepted: Vec<f64> = dominating
            .into_iter()
            .filter(|&(t, u)| u * lambda_max <= full.intensity_at(t))
            .map(|(t, _)| t)
            .collect();

        let horizon = match cfg.target_events {
            None => cfg.horizon,
            Some(target) => self.choose_horizon(&accepted, target)?,
        };
        Ok(truncate(&full, horizon, &accepted))
    }

    fn choose_horizon(&self, accepted: &[f64], target: usize) -> Result<f64, PriorError> {
        let count_to = |t: f64| accepted.partition_point(|&e| e <= t);
        let mut t = self.config.horizon;
        let mut best = (usize::MAX, t);
        // Horizons known to give too few / too many events. The proportional
        // step overshoots once counts are discrete, so it is bisected back into
        // the bracket when it leaves it.
        let (mut lo, mut hi) = (0.0_f64, self.cap);
        for _ in 0..=self.config.max_retries {
            let count = count_to(t);
            let miss = count.abs_diff(target);
            if miss < best.0 {
                best = (miss, t);
            }
            if miss == 0 {
                break;
            }
            if count < target {
                lo = lo.max(t);
            } else {
                hi = hi.min(t);
            }
            t = if count == 0 { 2.0 * t } else { t * target as f64 / count as f64 };
            t = t.min(self.cap);
            if !(t > lo && t < hi) {
                t = 0.5 * (lo + hi);
            }
            if !(t.is_finite() && t > 0.0) {
                return Err(PriorError::DegenerateHorizon(t));
            }
        }
        Ok(best.1)
    }
}

fn truncate(full: &LgcpDraw, horizon: f64, accepted: &[f64]) -> LgcpDraw {
    let keep = full.grid.partition_point(|&g| g < horizon);
    let mut grid = full.grid[..keep].to_vec();
    let mut log_intensity = full.log_intensity[..keep].to_vec();
    let mut intensity = full.intensity[..keep].to_vec();
    let mut cumulative = full.cumulative[..keep].to_vec();
    let g_end = full.log_intensity_at(horizon);
    let l_end = g_end.exp();
    let c_end = cumulative[keep - 1] + 0.5 * (horizon - grid[keep - 1]) * (intensity[keep - 1] + l_end);
    grid.push(horizon);
    log_intensity.push(g_end);
    intensity.push(l_end);
    cumulative.push(c_end);
    let events = accepted.iter().cloned().filter(|&e| e <= horizon).collect();
    LgcpDraw { horizon, grid, log_intensity, intensity, cumulative, events }
}

/// One-off draw; builds an [`LgcpSampler`] internally.
pub fn sample_lgcp(config: &LgcpConfig, rng: &mut Rng) -> Result<LgcpDraw, PriorError> {
    LgcpSampler::new(config.clone())?.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn constant(lambda0: f64, horizon: f64) -> LgcpConfig {
        let kernel = KernelSpec::rbf(1.0).with_amplitude(1e-24).with_jitter(1e-24);
        LgcpConfig::new(kernel, lambda0.ln(), horizon)
    }

    #[test]
    fn constant_rate_integral() {
        let draw = sample_lgcp(&constant(2.0, 10.0), &mut seeded(1)).unwrap();
        assert_eq!(draw.grid.len(), 4097);
        for (t, c) in draw.grid.iter().zip(&draw.cumulative) {
            assert!((c - 2.0 * t).abs() < 1e-6, "t={t} c={c}");
        }
    }

    #[test]
    fn constant_rate_mean_count() {
        // Poisson oracle: E[N] = lambda0 * T = 20.
        let sampler = LgcpSampler::new(constant(2.0, 10.0)).unwrap();
        let mut rng = seeded(2);
        let n = 10_000;
        let total: usize = (0..n).map(|_| sampler.sample(&mut rng).unwrap().events.len()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 20.0).abs() < 0.5, "{mean}");
    }

    #[test]
    fn draw_invariants() {
        let cfg = LgcpConfig::new(KernelSpec::rbf(10.0), 0.0, 50.0).with_target(80);
        let sampler = LgcpSampler::new(cfg).unwrap();
        let mut rng = seeded(3);
        let mut hits = 0;
        for _ in 0..50 {
            let d = sampler.sample(&mut rng).unwrap();
            assert_eq!(d.cumulative[0], 0.0);
            assert!(d.cumulative.windows(2).all(|w| w[1] >= w[0]));
            assert!(d.events.iter().all(|&e| (0.0..=d.horizon).contains(&e)));
            for (g, l) in d.log_intensity.iter().zip(&d.intensity) {
                assert_eq!(g.exp(), *l);
                assert!(*l > 0.0);
            }
            assert_eq!(*d.grid.last().unwrap(), d.horizon);
            hits += usize::from(d.events.len() == 80);
        }
        assert!(hits >= 45, "only {hits} of 50 draws hit the target count");
    }

    #[test]
    fn integral_at_matches_grid() {
        let cfg = LgcpConfig::new(KernelSpec::rbf(5.0), 0.5, 20.0);
        let d = sample_lgcp(&cfg, &mut seeded(4)).unwrap();
        for i in [0, 17, 1000, 4096] {
            assert!((d.integral_at(d.grid[i]) - d.cumulative[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn validation() {
        let mut cfg = constant(1.0, 10.0);
        cfg.resolution = 100;
        assert_eq!(sample_lgcp(&cfg, &mut seeded(0)), Err(PriorError::Resolution(100)));
        let cfg = constant(1.0, 0.0);
        assert!(matches!(sample_lgcp(&cfg, &mut seeded(0)), Err(PriorError::DegenerateHorizon(_))));
        let cfg = LgcpConfig::new(KernelSpec::rbf(1.0), 800.0, 10.0);
        assert_eq!(sample_lgcp(&cfg, &mut seeded(0)), Err(PriorError::IntensityOverflow));
    }
}
