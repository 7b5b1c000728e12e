use serde::{Deserialize, Serialize};

use super::PriorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `amplitude * exp(-d^2 / l^2)`. Note the lengthscale enters squared without
    /// the usual factor of two.
    Rbf,
    /// `amplitude * (1 + sqrt(3) d / l) * exp(-sqrt(3) d / l)`.
    Matern32,
}

/// Stationary isotropic covariance function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Added to the diagonal of assembled covariance matrices.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_jitter() -> f64 {
    1e-6
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64) -> Self {
        Self { family: KernelFamily::Rbf, lengthscale, amplitude: 1.0, jitter: default_jitter() }
    }

    pub fn matern32(lengthscale: f64) -> Self {
        Self { family: KernelFamily::Matern32, lengthscale, amplitude: 1.0, jitter: default_jitter() }
    }

    pub fn with_amplitude(self, amplitude: f64) -> Self {
        Self { amplitude, ..self }
    }

    pub fn with_jitter(self, jitter: f64) -> Self {
        Self { jitter, ..self }
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.lengthscale) || !ok(self.amplitude) || !ok(self.jitter) {
            return Err(PriorError::InvalidKernel(*self));
        }
        Ok(())
    }

    /// Covariance at distance `distance >= 0`.
    pub fn eval(&self, distance: f64) -> Result<f64, PriorError> {
        if !(distance >= 0.0) {
            return Err(PriorError::NegativeDistance(distance));
        }
        Ok(self.eval_unchecked(distance))
    }

    pub(crate) fn eval_unchecked(&self, d: f64) -> f64 {
        let r = d / self.lengthscale;
        match self.family {
            KernelFamily::Rbf => self.amplitude * (-r * r).exp(),
            KernelFamily::Matern32 => {
                let a = 3f64.sqrt() * r;
                self.amplitude * (1.0 + a) * (-a).exp()
            }
        }
    }

    /// Covariance between two points.
    pub fn between(&self, a: &[f64], b: &[f64]) -> f64 {
        self.eval_unchecked(euclidean(a, b))
    }

    /// Dense `K(xs, xs)` without jitter.
    pub fn gram(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        let n = xs.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.between(&xs[i], &xs[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }

    /// Dense `K(xs, ys)`, `xs.len() x ys.len()`.
    pub fn cross(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<f64> {
        let mut k = Vec::with_capacity(xs.len() * ys.len());
        for x in xs {
            for y in ys {
                k.push(self.between(x, y));
            }
        }
        k
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Free-function form of [`KernelSpec::eval`].
pub fn kernel_eval(spec: &KernelSpec, distance: f64) -> Result<f64, PriorError> {
    spec.eval(distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        let rbf = KernelSpec::rbf(8.0);
        assert_eq!(rbf.eval(0.0).unwrap(), 1.0);
        assert!((rbf.eval(8.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!((rbf.eval(8.0).unwrap() - 0.36788).abs() < 1e-5);
        assert_eq!(KernelSpec::matern32(0.3).eval(0.0).unwrap(), 1.0);
        assert_eq!(KernelSpec::matern32(0.3).with_amplitude(2.5).eval(0.0).unwrap(), 2.5);
        assert!(rbf.eval(-1.0).is_err());
        assert!(KernelSpec::rbf(0.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn peak_at_zero(l in 1e-3f64..10.0, d in 0.0f64..50.0, matern in any::<bool>()) {
            let k = if matern { KernelSpec::matern32(l) } else { KernelSpec::rbf(l) };
            prop_assert!(k.eval(0.0).unwrap() >= k.eval(d).unwrap());
        }
    }
}
