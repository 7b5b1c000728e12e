//! Point and density error summaries.

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean squared error. Panics if the lengths differ; `NaN` for empty input.
pub fn mse(truth: &[f64], pred: &[f64]) -> f64 {
    assert_eq!(truth.len(), pred.len(), "length mismatch");
    truth.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> f64 {
    mse(truth, pred).sqrt()
}

/// Mean negative log density of `y` under independent `N(mean_i, var_i)`.
pub fn gaussian_nll(y: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    assert!(y.len() == mean.len() && y.len() == var.len(), "length mismatch");
    let total: f64 =
        y.iter().zip(mean).zip(var).map(|((y, m), v)| 0.5 * (LN_2PI + v.ln() + (y - m).powi(2) / v)).sum();
    total / y.len() as f64
}

/// Fraction of `truth` inside `[lo, hi]`, endpoints included.
pub fn coverage(truth: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    assert!(truth.len() == lo.len() && truth.len() == hi.len(), "length mismatch");
    let inside = truth.iter().zip(lo).zip(hi).filter(|((t, l), h)| *l <= *t && *t <= *h).count();
    inside as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_hand_values() {
        let y = [1.0, 2.0, 4.0];
        let m = [1.0, 3.0, 2.0];
        let v = [1.0, 1.0, 4.0];
        // Squared errors 0, 1, 4.
        assert!((mse(&y, &m) - 5.0 / 3.0).abs() < 1e-15);
        assert!((rmse(&y, &m) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        // 0.5 * [ (ln 2pi + 0) + (ln 2pi + 1) + (ln 2pi + ln 4 + 1) ] / 3
        let hand = 0.5 * (3.0 * LN_2PI + 2.0 + 4f64.ln()) / 3.0;
        assert!((gaussian_nll(&y, &m, &v) - hand).abs() < 1e-15);
        assert!((coverage(&y, &[0.0, 2.5, 4.0], &[2.0, 3.0, 4.0]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
