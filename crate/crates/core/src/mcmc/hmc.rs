use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::priors::collect_indexed;
use crate::rng::{standard_normal, stream, Rng};

use super::{LogDensityTarget, McmcError};

const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    /// Mean leapfrog count `L`; each trajectory uses a uniform count in `[L/2, 3L/2]`.
    pub leapfrog_steps: usize,
    pub target_accept: f64,
    pub seed: u64,
    /// Half-width of the uniform box around zero used when no initial points are given.
    pub init_radius: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self { chains: 4, warmup: 500, draws: 2000, leapfrog_steps: 32, target_accept: 0.8, seed: 0, init_radius: 2.0 }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<(), McmcError> {
        if self.chains == 0 || self.draws == 0 || self.leapfrog_steps == 0 {
            return Err(McmcError::Config("chains, draws and leapfrog_steps must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(McmcError::Config(format!("target_accept {} not in (0, 1)", self.target_accept)));
        }
        if !(self.init_radius >= 0.0) {
            return Err(McmcError::Config("init_radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// Post-warmup draws for every chain, with the frozen adaptation state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSet {
    pub names: Vec<String>,
    /// `draws[chain][iteration][parameter]`
    pub draws: Vec<Vec<Vec<f64>>>,
    pub accept_rate: Vec<f64>,
    pub step_size: Vec<f64>,
    pub inv_metric: Vec<Vec<f64>>,
    pub divergences: Vec<usize>,
    pub seed: u64,
}

impl ChainSet {
    /// Builds a chain set from raw draws, e.g. for diagnostics on external samples.
    pub fn from_draws(draws: Vec<Vec<Vec<f64>>>) -> Self {
        let c = draws.len();
        let p = draws.first().and_then(|d| d.first()).map_or(0, Vec::len);
        Self {
            names: (0..p).map(|i| format!("x{i}")).collect(),
            draws,
            accept_rate: vec![f64::NAN; c],
            step_size: vec![f64::NAN; c],
            inv_metric: vec![vec![]; c],
            divergences: vec![0; c],
            seed: 0,
        }
    }

    pub fn chains(&self) -> usize {
        self.draws.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Every draw, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.iter().flatten().map(Vec::as_slice)
    }

    /// One parameter's draws, `[chain][iteration]`.
    pub fn param(&self, j: usize) -> Vec<Vec<f64>> {
        self.draws.iter().map(|c| c.iter().map(|d| d[j]).collect()).collect()
    }

    pub fn total_divergences(&self) -> usize {
        self.divergences.iter().sum()
    }
}

/// Position, momentum, log density and gradient after a trajectory.
pub struct Phase {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub logp: f64,
    pub grad: Vec<f64>,
}

/// `steps` leapfrog steps of size `eps` under kinetic energy `0.5 p' diag(inv_metric) p`.
pub fn leapfrog<T: LogDensityTarget + ?Sized>(
    target: &T,
    start: &Phase,
    inv_metric: &[f64],
    eps: f64,
    steps: usize,
) -> Result<Phase, String> {
    let mut x = start.x.clone();
    let mut p = start.p.clone();
    let mut grad = start.grad.clone();
    let mut logp = start.logp;
    for _ in 0..steps {
        for (pi, g) in p.iter_mut().zip(&grad) {
            *pi += 0.5 * eps * g;
        }
        for ((xi, pi), m) in x.iter_mut().zip(&p).zip(inv_metric) {
            *xi += eps * m * pi;
        }
        let (lp, g) = target.log_density(&x)?;
        if !lp.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err("non-finite log density or gradient".into());
        }
        logp = lp;
        grad = g;
        for (pi, g) in p.iter_mut().zip(&grad) {
            *pi += 0.5 * eps * g;
        }
    }
    Ok(Phase { x, p, logp, grad })
}

fn kinetic(p: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_metric).map(|(pi, m)| pi * pi * m).sum::<f64>()
}

struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), h_bar: 0.0, log_eps_bar: 0.0, t: 0.0, target }
    }

    /// Returns the next step size to try.
    fn update(&mut self, accept: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        let log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Warmup iterations at which the metric is re-estimated: a fast initial
/// window, doubling slow windows, then a fast terminal window.
fn metric_window_ends(warmup: usize) -> Vec<usize> {
    if warmup < 20 {
        return vec![];
    }
    let (init, term, base) = if warmup >= 150 { (75, 50, 25) } else { (warmup * 15 / 100, warmup / 10, warmup * 75 / 100) };
    let slow_end = warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = base.max(1);
    while start < slow_end {
        let mut end = start + size;
        // Fold a short final window into its predecessor.
        if end + 2 * size > slow_end {
            end = slow_end;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    ends
}

struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(p: usize) -> Self {
        Self { n: 0, mean: vec![0.0; p], m2: vec![0.0; p] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.n as f64;
            *s += d * (v - *m);
        }
    }

    /// Variance shrunk towards `1e-3`, as in Stan.
    fn regularised(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|s| (n / (n + 5.0)) * s / (n - 1.0) + 1e-3 * (5.0 / (n + 5.0))).collect()
    }
}

fn eval_checked<T: LogDensityTarget + ?Sized>(
    target: &T,
    x: &[f64],
    chain: usize,
) -> Result<(f64, Vec<f64>), McmcError> {
    let (lp, g) = target
        .log_density(x)
        .map_err(|message| McmcError::Init { chain, location: x.to_vec(), message })?;
    if !lp.is_finite() {
        return Err(McmcError::Init { chain, location: x.to_vec(), message: format!("log density {lp}") });
    }
    if g.len() != x.len() || g.iter().any(|v| !v.is_finite()) {
        return Err(McmcError::NonFiniteGradient { chain, location: x.to_vec() });
    }
    Ok((lp, g))
}

/// Central-difference spot check of the target's gradient.
fn check_gradient<T: LogDensityTarget + ?Sized>(target: &T, x: &[f64], grad: &[f64]) -> Result<(), McmcError> {
    let h = 1e-5;
    for j in 0..x.len().min(32) {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (Ok((fp, _)), Ok((fm, _))) = (target.log_density(&xp), target.log_density(&xm)) else { continue };
        let numeric = (fp - fm) / (2.0 * h);
        let scale = numeric.abs().max(grad[j].abs()).max(1.0);
        if (numeric - grad[j]).abs() > 1e-3 * scale {
            return Err(McmcError::GradientCheck { location: x.to_vec(), coordinate: j, analytic: grad[j], numeric });
        }
    }
    Ok(())
}

struct Transition {
    phase: Phase,
    accept: f64,
    divergent: bool,
}

fn transition<T: LogDensityTarget + ?Sized>(
    target: &T,
    current: &Phase,
    inv_metric: &[f64],
    eps: f64,
    l: usize,
    rng: &mut Rng,
) -> Transition {
    let p: Vec<f64> = inv_metric.iter().map(|m| standard_normal(rng) / m.sqrt()).collect();
    let steps = rng.random_range(l.div_ceil(2).max(1)..=(3 * l / 2).max(1));
    let start = Phase { x: current.x.clone(), p, logp: current.logp, grad: current.grad.clone() };
    let h0 = -start.logp + kinetic(&start.p, inv_metric);
    let u: f64 = rng.random();
    let rejected = |divergent| Transition {
        phase: Phase { x: current.x.clone(), p: vec![], logp: current.logp, grad: current.grad.clone() },
        accept: 0.0,
        divergent,
    };
    match leapfrog(target, &start, inv_metric, eps, steps) {
        Err(_) => rejected(true),
        Ok(end) => {
            let h1 = -end.logp + kinetic(&end.p, inv_metric);
            let dh = h1 - h0;
            if !dh.is_finite() || dh > MAX_ENERGY_ERROR {
                return rejected(true);
            }
            let accept = (-dh).exp().min(1.0);
            if u < accept {
                Transition { phase: end, accept, divergent: false }
            } else {
                Transition { accept, ..rejected(false) }
            }
        }
    }
}

/// Stan's heuristic: double or halve until a single step's acceptance crosses 0.5.
fn initial_step_size<T: LogDensityTarget + ?Sized>(target: &T, current: &Phase, inv_metric: &[f64], rng: &mut Rng) -> f64 {
    let mut eps = 1.0;
    let p: Vec<f64> = inv_metric.iter().map(|m| standard_normal(rng) / m.sqrt()).collect();
    let start = Phase { x: current.x.clone(), p, logp: current.logp, grad: current.grad.clone() };
    let h0 = -start.logp + kinetic(&start.p, inv_metric);
    let log_accept = |eps: f64| match leapfrog(target, &start, inv_metric, eps, 1) {
        Ok(end) => {
            let v = h0 - (-end.logp + kinetic(&end.p, inv_metric));
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(_) => f64::NEG_INFINITY,
    };
    let direction = if log_accept(eps) > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let la = log_accept(eps);
        if (direction > 0.0 && la <= 0.5f64.ln()) || (direction < 0.0 && la > 0.5f64.ln()) {
            break;
        }
        eps *= 2f64.powf(direction);
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps
}

fn run_chain<T: LogDensityTarget + ?Sized>(
    target: &T,
    cfg: &HmcConfig,
    chain: usize,
    init: Option<&[f64]>,
) -> Result<(Vec<Vec<f64>>, f64, f64, Vec<f64>, usize), McmcError> {
    let dim = target.dim();
    let mut rng = stream(cfg.seed, chain as u64);
    let x0: Vec<f64> = match init {
        Some(x) => x.to_vec(),
        None => (0..dim)
            .map(|_| if cfg.init_radius > 0.0 { rng.random_range(-cfg.init_radius..cfg.init_radius) } else { 0.0 })
            .collect(),
    };
    let (lp, grad) = eval_checked(target, &x0, chain)?;
    if chain == 0 {
        check_gradient(target, &x0, &grad)?;
    }
    let mut current = Phase { x: x0, p: vec![], logp: lp, grad };
    let mut inv_metric = vec![1.0; dim];
    let mut eps = initial_step_size(target, &current, &inv_metric, &mut rng);
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let windows = metric_window_ends(cfg.warmup);
    let first_window_start = if cfg.warmup >= 150 { 75 } else { cfg.warmup * 15 / 100 };
    let mut welford = Welford::new(dim);
    let mut accepted_warmup = 0usize;

    for it in 0..cfg.warmup {
        let t = transition(target, &current, &inv_metric, eps, cfg.leapfrog_steps, &mut rng);
        if t.accept > 0.0 && !t.divergent {
            accepted_warmup += 1;
        }
        current = t.phase;
        eps = da.update(t.accept);
        if it >= first_window_start && windows.last().is_some_and(|&e| it < e) {
            welford.push(&current.x);
        }
        if windows.contains(&(it + 1)) {
            if welford.n >= 3 {
                inv_metric = welford.regularised();
            }
            welford = Welford::new(dim);
            eps = initial_step_size(target, &current, &inv_metric, &mut rng);
            da = DualAveraging::new(eps, cfg.target_accept);
        }
    }
    if cfg.warmup > 0 {
        if accepted_warmup == 0 {
            return Err(McmcError::StepSizeCollapsed { chain });
        }
        eps = da.final_step();
    }

    let mut draws = Vec::with_capacity(cfg.draws);
    let mut accept_sum = 0.0;
    let mut divergences = 0;
    for _ in 0..cfg.draws {
        let t = transition(target, &current, &inv_metric, eps, cfg.leapfrog_steps, &mut rng);
        accept_sum += t.accept;
        divergences += usize::from(t.divergent);
        current = t.phase;
        draws.push(current.x.clone());
    }
    Ok((draws, accept_sum / cfg.draws as f64, eps, inv_metric, divergences))
}

/// Runs `config.chains` chains, in parallel when the `parallel` feature is on.
/// Chain `c` uses random stream `(seed, c)`, so results do not depend on
/// scheduling. `inits`, when given, supplies one starting point per chain.
pub fn hmc_sample<T: LogDensityTarget + ?Sized>(
    target: &T,
    config: &HmcConfig,
    inits: Option<&[Vec<f64>]>,
) -> Result<ChainSet, McmcError> {
    config.validate()?;
    if let Some(inits) = inits {
        if inits.len() != config.chains || inits.iter().any(|x| x.len() != target.dim()) {
            return Err(McmcError::Config(format!(
                "need {} initial points of dimension {}",
                config.chains,
                target.dim()
            )));
        }
    }
    let results = collect_indexed(config.chains, |c| run_chain(target, config, c, inits.map(|i| &i[c][..])))?;
    let mut set = ChainSet {
        names: target.param_names(),
        draws: Vec::with_capacity(config.chains),
        accept_rate: vec![],
        step_size: vec![],
        inv_metric: vec![],
        divergences: vec![],
        seed: config.seed,
    };
    for (draws, acc, eps, metric, div) in results {
        set.draws.push(draws);
        set.accept_rate.push(acc);
        set.step_size.push(eps);
        set.inv_metric.push(metric);
        set.divergences.push(div);
    }
    Ok(set)
}
