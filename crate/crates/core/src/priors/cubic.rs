use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

use super::{FunctionDraw, PriorError};

/// Monotone cubics `a s^3 + b s^2 + c s + d` with coefficients drawn uniformly
/// from the given ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CubicConfig {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
    pub d: [f64; 2],
    /// Monotonicity is enforced on this interval and locations are drawn from it.
    pub interval: [f64; 2],
    pub max_attempts: usize,
}

impl Default for CubicConfig {
    fn default() -> Self {
        Self {
            a: [-1.0, 1.0],
            b: [-1.0, 1.0],
            c: [-1.0, 1.0],
            d: [-1.0, 1.0],
            interval: [-1.0, 1.0],
            max_attempts: 10_000,
        }
    }
}

impl CubicConfig {
    pub fn validate(&self) -> Result<(), PriorError> {
        for (name, r) in [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d), ("interval", self.interval)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(PriorError::InvalidRange { field: format!("cubic.{name}"), range: r });
            }
        }
        if self.interval[0] == self.interval[1] {
            return Err(PriorError::InvalidRange { field: "cubic.interval".into(), range: self.interval });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cubic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Cubic {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn eval(&self, s: f64) -> f64 {
        ((self.a * s + self.b) * s + self.c) * s + self.d
    }

    pub fn derivative(&self, s: f64) -> f64 {
        (3.0 * self.a * s + 2.0 * self.b) * s + self.c
    }

    /// True when the derivative does not take both signs on `[lo, hi]`.
    pub fn is_monotone_on(&self, lo: f64, hi: f64) -> bool {
        let mut candidates = vec![self.derivative(lo), self.derivative(hi)];
        if self.a != 0.0 {
            let vertex = -self.b / (3.0 * self.a);
            if vertex > lo && vertex < hi {
                candidates.push(self.derivative(vertex));
            }
        }
        let min = candidates.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        !(min < 0.0 && max > 0.0)
    }

    pub fn draw_at(&self, id: usize, locations: Vec<f64>) -> FunctionDraw {
        let values = locations.iter().map(|&s| self.eval(s)).collect();
        FunctionDraw { id, locations: locations.into_iter().map(|s| vec![s]).collect(), values, integral: None }
    }
}

/// Rejection-samples a monotone cubic.
pub fn sample_cubic_coefficients(rng: &mut Rng, config: &CubicConfig) -> Result<Cubic, PriorError> {
    config.validate()?;
    let uni = |rng: &mut Rng, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..r[1]) };
    for _ in 0..config.max_attempts {
        let cubic = Cubic::new(uni(rng, config.a), uni(rng, config.b), uni(rng, config.c), uni(rng, config.d));
        if cubic.is_monotone_on(config.interval[0], config.interval[1]) {
            return Ok(cubic);
        }
    }
    Err(PriorError::RejectionBudget { attempts: config.max_attempts })
}

/// A monotone cubic evaluated at `k` uniform locations in the configured interval.
pub fn sample_cubic(rng: &mut Rng, config: &CubicConfig, id: usize, k: usize) -> Result<FunctionDraw, PriorError> {
    let cubic = sample_cubic_coefficients(rng, config)?;
    let [lo, hi] = config.interval;
    let locations = (0..k).map(|_| rng.random_range(lo..hi)).collect();
    Ok(cubic.draw_at(id, locations))
}
