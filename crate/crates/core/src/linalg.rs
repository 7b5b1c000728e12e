//! Small dense linear algebra on row-major `n x n` matrices.

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("Cholesky failed even with jitter {jitter}")]
    JitterExhausted { jitter: f64 },
}

/// Lower Cholesky factor `L` with `A = L L^T`.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>, LinalgError> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(LinalgError::NotPositiveDefinite { pivot: i, value: s });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Cholesky of `A + jitter I`, multiplying the jitter by ten up to `retries`
/// times on failure. Returns the factor and the jitter that worked.
pub fn cholesky_with_jitter(a: &[f64], n: usize, jitter: f64, retries: u32) -> Result<(Vec<f64>, f64), LinalgError> {
    let mut jit = jitter;
    let mut m = a.to_vec();
    for attempt in 0..=retries {
        for i in 0..n {
            m[i * n + i] = a[i * n + i] + jit;
        }
        if let Ok(l) = cholesky(&m, n) {
            return Ok((l, jit));
        }
        if attempt < retries {
            jit *= 10.0;
        }
    }
    Err(LinalgError::JitterExhausted { jitter: jit })
}

/// Solves `L x = b`.
pub fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves `L^T x = b`.
pub fn solve_upper_t(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves `(L L^T) x = b`.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    solve_upper_t(l, n, &solve_lower(l, n, b))
}

/// `log det(L L^T)`.
pub fn cholesky_log_det(l: &[f64], n: usize) -> f64 {
    2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
}

/// `(L L^T)^{-1}`, dense, via `L^{-1}` in about `n^3 / 2` flops.
pub fn cholesky_inverse(l: &[f64], n: usize) -> Vec<f64> {
    // Lower-triangular inverse, column by column.
    let mut li = vec![0.0; n * n];
    for j in 0..n {
        li[j * n + j] = 1.0 / l[j * n + j];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i * n + k] * li[k * n + j];
            }
            li[i * n + j] = s / l[i * n + i];
        }
    }
    // (L^{-1})^T L^{-1}, filling the upper triangle by symmetry.
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (i..n).map(|k| li[k * n + i] * li[k * n + j]).sum();
            inv[i * n + j] = s;
            inv[j * n + i] = s;
        }
    }
    inv
}

/// `L z` for a lower-triangular `L`.
pub fn lower_mul(l: &[f64], n: usize, z: &[f64]) -> Vec<f64> {
    (0..n).map(|i| (0..=i).map(|k| l[i * n + k] * z[k]).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_and_solve() {
        let a = [4.0, 2.0, 0.6, 2.0, 2.0, 0.5, 0.6, 0.5, 3.0];
        let l = cholesky(&a, 3).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = cholesky_solve(&l, 3, &b);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-12);
        }
        let inv = cholesky_inverse(&l, 3);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = [1.0, 1.0, 1.0, 1.0];
        assert!(cholesky(&a, 2).is_err());
        let (_, jit) = cholesky_with_jitter(&a, 2, 1e-10, 3).unwrap();
        assert!(jit >= 1e-10);
        assert!(cholesky_with_jitter(&[-1.0], 1, 1e-10, 3).is_err());
    }
}
