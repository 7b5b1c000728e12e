use crate::linalg::{cholesky_with_jitter, lower_mul};
use crate::rng::{standard_normals, Rng};

use super::{KernelSpec, PriorError};

/// Jitter escalation: multiply by ten, at most this many times.
pub const JITTER_RETRIES: u32 = 3;

/// Zero-mean GP draw at `locations`, via the Cholesky factor of
/// `K + jitter I`.
pub fn sample_gp(spec: &KernelSpec, locations: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<f64>, PriorError> {
    spec.validate()?;
    if locations.is_empty() {
        return Err(PriorError::NoLocations);
    }
    if locations.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PriorError::NonFiniteLocation);
    }
    let n = locations.len();
    let k = spec.gram(locations);
    let (l, _) = cholesky_with_jitter(&k, n, spec.jitter, JITTER_RETRIES)?;
    let z = standard_normals(rng, n);
    Ok(lower_mul(&l, n, &z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn single_point_marginal() {
        let spec = KernelSpec::rbf(1.0).with_amplitude(2.0).with_jitter(0.5);
        let mut rng = seeded(3);
        let n = 40_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_gp(&spec, &[vec![0.3]], &mut rng).unwrap()[0]).collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var - 2.5).abs() < 0.08, "{var}");
    }

    #[test]
    fn duplicated_location_is_nearly_identical() {
        let spec = KernelSpec::rbf(1.0).with_jitter(1e-10);
        let mut rng = seeded(4);
        for _ in 0..100 {
            let v = sample_gp(&spec, &[vec![0.5], vec![0.5]], &mut rng).unwrap();
            assert!((v[0] - v[1]).abs() < 1e-3);
        }
    }

    #[test]
    fn empirical_covariance_matches_kernel() {
        // Monte Carlo oracle: sample covariance of 20k draws against the kernel.
        let spec = KernelSpec::matern32(0.7).with_amplitude(1.3);
        let locs: Vec<Vec<f64>> = [-0.9, -0.2, 0.0, 0.45, 1.0].iter().map(|&x| vec![x]).collect();
        let mut rng = seeded(5);
        let n = 20_000;
        let mut cov = [[0.0; 5]; 5];
        for _ in 0..n {
            let v = sample_gp(&spec, &locs, &mut rng).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    cov[i][j] += v[i] * v[j] / n as f64;
                }
            }
        }
        for i in 0..5 {
            for j in 0..5 {
                let mut expected = spec.between(&locs[i], &locs[j]);
                if i == j {
                    expected += spec.jitter;
                }
                assert!((cov[i][j] - expected).abs() < 0.05, "({i},{j}) {} vs {expected}", cov[i][j]);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = KernelSpec::rbf(0.5);
        let locs = vec![vec![0.0, 0.1], vec![0.4, -0.3], vec![1.0, 1.0]];
        let a = sample_gp(&spec, &locs, &mut seeded(9)).unwrap();
        let b = sample_gp(&spec, &locs, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        let spec = KernelSpec::rbf(0.5);
        assert!(sample_gp(&spec, &[], &mut seeded(0)).is_err());
        assert!(sample_gp(&spec, &[vec![f64::NAN]], &mut seeded(0)).is_err());
    }
}
