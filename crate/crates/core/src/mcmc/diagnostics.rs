use serde::{Deserialize, Serialize};

use super::{ChainSet, McmcError};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn check_shape(chains: &[Vec<f64>]) -> Result<(), McmcError> {
    if chains.len() < 2 {
        return Err(McmcError::TooFew { what: "chains", need: 2, got: chains.len() });
    }
    let s = chains.iter().map(Vec::len).min().unwrap_or(0);
    if s < 4 {
        return Err(McmcError::TooFew { what: "draws per chain", need: 4, got: s });
    }
    Ok(())
}

/// Split-R-hat of one parameter, `None` when within-chain variance is zero.
fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let half = chains[0].len() / 2;
    let n = chains.len();
    let mut pieces: Vec<&[f64]> = Vec::with_capacity(2 * n);
    for c in chains {
        let len = c.len();
        pieces.push(&c[..half]);
        pieces.push(&c[len - half..]);
    }
    let len = half as f64;
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let w = mean(&pieces.iter().map(|p| sample_var(p)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return None;
    }
    let b_over_n = sample_var(&means);
    let var_plus = (len - 1.0) / len * w + b_over_n;
    Some((var_plus / w).sqrt())
}

/// Biased autocovariance at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence, capped at the
/// number of draws. `None` when the draws have no variance.
fn combined_ess(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap();
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return None;
    }
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + sample_var(&means);
    let rho = |t: usize| -> f64 {
        let acov = mean(&chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, t)).collect::<Vec<_>>());
        1.0 - (w - acov) / var_plus
    };
    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (2.0 * tau - 1.0).max(1.0 / (m as f64 * nf).log10());
    let total = m as f64 * nf;
    Some((total / tau).min(total))
}

/// Split-R-hat per parameter; `None` flags a degenerate (zero-variance) parameter.
pub fn rhat(chains: &ChainSet) -> Result<Vec<Option<f64>>, McmcError> {
    (0..chains.dim())
        .map(|j| {
            let p = chains.param(j);
            check_shape(&p)?;
            Ok(split_rhat(&p))
        })
        .collect()
}

/// Effective sample size per parameter; `None` flags a degenerate parameter.
pub fn ess(chains: &ChainSet) -> Result<Vec<Option<f64>>, McmcError> {
    (0..chains.dim())
        .map(|j| {
            let p = chains.param(j);
            check_shape(&p)?;
            Ok(combined_ess(&p))
        })
        .collect()
}

/// Convergence summary. Degenerate parameters carry `null` R-hat and ESS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub rhat: Vec<Option<f64>>,
    pub ess: Vec<Option<f64>>,
    /// ESS divided by the total number of draws.
    pub ess_ratio: Vec<Option<f64>>,
    pub max_rhat: Option<f64>,
    pub min_ess_ratio: Option<f64>,
    pub divergences: usize,
    pub accept_rate: Vec<f64>,
    pub step_size: Vec<f64>,
    pub degenerate: Vec<String>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    /// Computes every summary and records warnings for R-hat above `rhat_bar`,
    /// divergences and degenerate parameters.
    pub fn compute(chains: &ChainSet, rhat_bar: f64) -> Result<Self, McmcError> {
        let r = rhat(chains)?;
        let e = ess(chains)?;
        let total = (chains.chains() * chains.draws_per_chain()) as f64;
        let ratio: Vec<Option<f64>> = e.iter().map(|v| v.map(|v| v / total)).collect();
        let max_rhat = r.iter().flatten().cloned().reduce(f64::max);
        let min_ess_ratio = ratio.iter().flatten().cloned().reduce(f64::min);
        let degenerate: Vec<String> =
            chains.names.iter().zip(&r).filter(|(_, r)| r.is_none()).map(|(n, _)| n.clone()).collect();
        let mut warnings = Vec::new();
        for (name, rv) in chains.names.iter().zip(&r) {
            if let Some(v) = rv {
                if *v > rhat_bar {
                    warnings.push(format!("R-hat for {name} is {v:.4}, above {rhat_bar}"));
                }
            }
        }
        if !degenerate.is_empty() {
            warnings.push(format!("degenerate parameters: {}", degenerate.join(", ")));
        }
        let divergences = chains.total_divergences();
        if divergences > 0 {
            warnings.push(format!("{divergences} divergent transitions after warmup"));
        }
        Ok(Self {
            names: chains.names.clone(),
            rhat: r,
            ess: e,
            ess_ratio: ratio,
            max_rhat,
            min_ess_ratio,
            divergences,
            accept_rate: chains.accept_rate.clone(),
            step_size: chains.step_size.clone(),
            degenerate,
            warnings,
        })
    }

    pub fn converged(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Applies `predictor` to every `stride`-th draw of each chain, in chain order.
pub fn posterior_predictive<T, E: std::fmt::Display>(
    chains: &ChainSet,
    stride: usize,
    mut predictor: impl FnMut(&[f64]) -> Result<T, E>,
) -> Result<Vec<T>, McmcError> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for (c, chain) in chains.draws.iter().enumerate() {
        for (i, d) in chain.iter().enumerate().step_by(stride) {
            out.push(predictor(d).map_err(|e| McmcError::Predictor { chain: c, draw: i, message: e.to_string() })?);
        }
    }
    Ok(out)
}
