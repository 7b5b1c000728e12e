//! End-to-end acceptance checks. Each criterion prints one `[PASS]` or
//! `[FAIL]` line; the process exits non-zero if any fails.
//!
//! `PIVAE_ACCEPTANCE=1,3` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng as _;
use statrs::distribution::{ContinuousCDF, Normal};

use pivae::autodiff::{gradient_check, AdamConfig, Graph, NodeId, Tensor, TensorMap};
use pivae::baselines::{optimize_gp, GpOptConfig, GpRegressor};
use pivae::benchmark::{run_benchmark, BenchInference, BenchmarkConfig, BenchmarkReport, FieldConfig, GpBaselineConfig};
use pivae::formats;
use pivae::inference::{generate, infer, log_posterior, predict, InferConfig, PredictConfig};
use pivae::mcmc::{ess, hmc_sample, rhat, ChainSet, HmcConfig, LogDensityTarget};
use pivae::model::{pivae_loss, pivae_loss_gradients, train_prior, write_model, Architecture, TrainOutcome};
use pivae::priors::{
    build_prior_dataset, sample_gp, sample_lgcp, CubicConfig, FunctionDraw, LgcpConfig, PriorConfig, PriorDataset,
};
use pivae::rng::{seeded, standard_normal, standard_normals, stream, Rng};
use pivae::{KernelFamily, KernelSpec, NoiseModel, ObservedData, PiVaeModel, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn main() {
    let selected: Option<Vec<u32>> =
        std::env::var("PIVAE_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(u32, &str, u64, fn() -> Outcome); 8] = [
        (1, "gradients match central differences", 60, gradients),
        (2, "exchangeability and consistency are bit-exact", 60, process_invariants),
        (3, "1-D GP regression: coverage and mixing", 30 * 60, gp_regression),
        (4, "cubic task: noise recovery and accuracy against a GP", 20 * 60, cubic_task),
        (5, "LGCP: integral and intensity band", 45 * 60, lgcp_task),
        (6, "MCMC calibration on normal and AR(1) targets", 5 * 60, mcmc_calibration),
        (7, "2-D interpolation against an exact GP", 2 * 60 * 60, interpolation_2d),
        (8, "pipeline artifacts are reproducible", 10 * 60, reproducibility),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > Duration::from_secs(budget) => {
                Err(format!("{detail}; over the {budget} s budget"))
            }
            other => other,
        };
        let secs = elapsed.as_secs_f64();
        match result {
            Ok(detail) => println!("[PASS] {id}. {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id}. {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// 1. Gradients -------------------------------------------------------------

const REL_TOL: f64 = 1e-4;

struct OpCase {
    name: &'static str,
    params: Vec<(&'static str, Tensor)>,
    inputs: TensorMap,
    build: fn(&mut Graph, &[NodeId], &TensorMap) -> NodeId,
}

fn uniform(rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect())
}

/// Entries bounded away from zero so kinks are not straddled by the difference.
fn away_from_zero(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    let v = (0..r * c).map(|_| rng.random_range(0.1..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Tensor::matrix(r, c, v)
}

fn normal(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, standard_normals(rng, r * c))
}

fn op_cases(rng: &mut Rng) -> Vec<OpCase> {
    let (r, c, k) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..4));
    let none = TensorMap::new;
    let mut cases = vec![
        OpCase { name: "add", params: vec![("a", normal(rng, r, c)), ("b", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.add(p[0], p[1]) },
        OpCase { name: "add_row", params: vec![("a", normal(rng, r, c)), ("b", normal(rng, 1, c))], inputs: none(), build: |g, p, _| g.add(p[0], p[1]) },
        OpCase { name: "add_scalar_tensor", params: vec![("a", normal(rng, r, c)), ("b", normal(rng, 1, 1))], inputs: none(), build: |g, p, _| g.add(p[0], p[1]) },
        OpCase { name: "sub", params: vec![("a", normal(rng, r, c)), ("b", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.sub(p[0], p[1]) },
        OpCase { name: "sub_column", params: vec![("a", normal(rng, r, c)), ("b", normal(rng, r, 1))], inputs: none(), build: |g, p, _| g.sub(p[0], p[1]) },
        OpCase { name: "mul", params: vec![("a", normal(rng, r, c)), ("b", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.mul(p[0], p[1]) },
        OpCase { name: "mul_row", params: vec![("a", normal(rng, r, c)), ("b", normal(rng, 1, c))], inputs: none(), build: |g, p, _| g.mul(p[0], p[1]) },
        OpCase { name: "matmul", params: vec![("a", normal(rng, r, k)), ("b", normal(rng, k, c))], inputs: none(), build: |g, p, _| g.matmul(p[0], p[1]) },
        OpCase {
            name: "affine",
            params: vec![("x", normal(rng, r, k)), ("w", normal(rng, k, c)), ("b", normal(rng, 1, c))],
            inputs: none(),
            build: |g, p, _| g.affine(p[0], p[1], p[2]),
        },
        OpCase { name: "tanh", params: vec![("a", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.tanh(p[0]) },
        OpCase { name: "relu", params: vec![("a", away_from_zero(rng, r, c))], inputs: none(), build: |g, p, _| g.relu(p[0]) },
        OpCase { name: "exp", params: vec![("a", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.exp(p[0]) },
        OpCase { name: "log", params: vec![("a", uniform(rng, r, c, 0.2, 3.0))], inputs: none(), build: |g, p, _| g.log(p[0]) },
        OpCase { name: "square", params: vec![("a", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.square(p[0]) },
        OpCase { name: "scale", params: vec![("a", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.scale(p[0], -1.7) },
        OpCase { name: "add_scalar", params: vec![("a", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.add_scalar(p[0], 0.3) },
        OpCase { name: "sum", params: vec![("a", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.sum(p[0]) },
        OpCase { name: "mean", params: vec![("a", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.mean(p[0]) },
        OpCase { name: "sum_cols", params: vec![("a", normal(rng, r, c))], inputs: none(), build: |g, p, _| g.sum_cols(p[0]) },
        OpCase {
            name: "pairwise_sq_dist",
            params: vec![("a", normal(rng, r, k)), ("b", normal(rng, c, k))],
            inputs: none(),
            build: |g, p, _| g.pairwise_sq_dist(p[0], p[1]),
        },
        OpCase {
            name: "readout_per_row",
            params: vec![("phi", normal(rng, r, k)), ("w", normal(rng, r, 2 * k))],
            inputs: none(),
            build: |g, p, _| g.readout(p[0], p[1]),
        },
        OpCase {
            name: "readout_shared",
            params: vec![("phi", normal(rng, r, k)), ("w", normal(rng, 1, k))],
            inputs: none(),
            build: |g, p, _| g.readout(p[0], p[1]),
        },
        OpCase {
            name: "slice_cols",
            params: vec![("a", normal(rng, r, c + 2))],
            inputs: none(),
            build: |g, p, _| g.slice_cols(p[0], 1, 3),
        },
        OpCase {
            name: "gaussian_log_density",
            params: vec![("y", normal(rng, r, c)), ("m", normal(rng, r, c)), ("s", uniform(rng, r, c, -1.0, 1.0))],
            inputs: none(),
            build: |g, p, _| g.gaussian_log_density(p[0], p[1], p[2]),
        },
        OpCase {
            name: "gaussian_log_density_shared_sd",
            params: vec![("y", normal(rng, r, c)), ("m", normal(rng, r, c)), ("s", uniform(rng, 1, 1, -1.0, 1.0))],
            inputs: none(),
            build: |g, p, _| g.gaussian_log_density(p[0], p[1], p[2]),
        },
        OpCase {
            name: "squared_error",
            params: vec![("a", normal(rng, r, c)), ("b", normal(rng, r, c))],
            inputs: none(),
            build: |g, p, _| g.squared_error(p[0], p[1]),
        },
        OpCase {
            name: "gaussian_kl",
            params: vec![("mu", normal(rng, r, c)), ("sd", uniform(rng, r, c, 0.3, 2.0))],
            inputs: none(),
            build: |g, p, _| g.gaussian_kl(p[0], p[1]),
        },
    ];
    // Repeated rows exercise gradient accumulation.
    let idx: Vec<f64> = (0..r + 2).map(|_| rng.random_range(0..r) as f64).collect();
    cases.push(OpCase {
        name: "gather_rows",
        params: vec![("a", normal(rng, r, c))],
        inputs: TensorMap::from([("idx".to_string(), Tensor::column(idx))]),
        build: |g, p, _| {
            let idx = g.input("idx");
            g.gather_rows(p[0], idx)
        },
    });
    cases
}

/// Builds `sum(w * op(params))` with a random constant `w` so every output
/// element contributes with its own weight.
fn weighted_check(case: &OpCase, rng: &mut Rng) -> Result<f64, String> {
    let params: TensorMap = case.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let mut probe = Graph::new();
    let ids: Vec<NodeId> = case.params.iter().map(|(n, _)| probe.param(*n)).collect();
    let y = (case.build)(&mut probe, &ids, &case.inputs);
    let shape = probe.forward(&case.inputs, &params).map_err(err)?.value(y).shape().to_vec();
    let (r, c) = (shape[0], shape.get(1).copied().unwrap_or(1));

    let mut g = Graph::new();
    let ids: Vec<NodeId> = case.params.iter().map(|(n, _)| g.param(*n)).collect();
    let y = (case.build)(&mut g, &ids, &case.inputs);
    let w = g.constant(Tensor::new(shape, uniform(rng, r, c, 0.5, 1.5).into_data()).map_err(err)?);
    let wy = g.mul(y, w);
    let out = g.sum(wy);
    gradient_check(&g, out, &case.inputs, &params, 1e-6, 1e-3).map_err(err)
}

fn tiny_architecture(channels: usize, input_dim: usize) -> Architecture {
    Architecture {
        input_dim,
        features: 4,
        latent_dim: 2,
        channels,
        centres: 3,
        phi_hidden: vec![5],
        encoder_hidden: vec![6],
        decoder_hidden: vec![6],
        activation: pivae::autodiff::Activation::Tanh,
    }
}

fn random_model(arch: Architecture, seed: u64) -> PiVaeModel {
    let bbox = vec![(-1.0, 1.0); arch.input_dim];
    let mut params = arch.init_params(&bbox, &mut stream(seed, 0));
    // Perturb so no parameter sits at a symmetric initial value.
    let mut rng = stream(seed, 1);
    for t in params.values_mut() {
        for v in t.data_mut() {
            *v += 0.3 * standard_normal(&mut rng);
        }
    }
    let scale = vec![1.0; arch.channels];
    PiVaeModel::new(arch, params, scale).expect("valid model")
}

/// Central differences of the full training loss over every network weight
/// and every per-function weight row.
fn loss_check(channels: usize, seed: u64) -> Result<(f64, usize), String> {
    let model = random_model(tiny_architecture(channels, 1), seed);
    let mut rng = stream(seed, 2);
    let batch: Vec<FunctionDraw> = (0..3)
        .map(|i| FunctionDraw {
            id: i,
            locations: (0..4).map(|_| vec![rng.random_range(-1.0..1.0)]).collect(),
            values: standard_normals(&mut rng, 4),
            integral: (channels == 2).then(|| standard_normals(&mut rng, 4)),
        })
        .collect();
    let beta_len = model.architecture().beta_len();
    let betas: Vec<Vec<f64>> = (0..3).map(|_| standard_normals(&mut rng, beta_len)).collect();
    let kl_weight = 0.7;
    let eps_seed = seed + 100;
    let (_, grads) = pivae_loss_gradients(&model, &batch, &betas, kl_weight, &mut seeded(eps_seed)).map_err(err)?;
    let loss_at = |params: &TensorMap, betas: &[Vec<f64>]| -> Result<f64, String> {
        let m = PiVaeModel::new(model.architecture().clone(), params.clone(), model.value_scale().to_vec()).map_err(err)?;
        Ok(pivae_loss(&m, &batch, betas, kl_weight, &mut seeded(eps_seed)).map_err(err)?.total)
    };
    let h = 1e-6;
    let rel = |numeric: f64, analytic: f64| (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
    let mut worst = 0.0_f64;
    let mut count = 0;
    for (name, t) in model.params() {
        for i in 0..t.len() {
            let mut p = model.params().clone();
            p.get_mut(name).unwrap().data_mut()[i] += h;
            let fp = loss_at(&p, &betas)?;
            p.get_mut(name).unwrap().data_mut()[i] -= 2.0 * h;
            let fm = loss_at(&p, &betas)?;
            worst = worst.max(rel((fp - fm) / (2.0 * h), grads[name].data()[i]));
            count += 1;
        }
    }
    for f in 0..betas.len() {
        for j in 0..beta_len {
            let mut b = betas.clone();
            b[f][j] += h;
            let fp = loss_at(model.params(), &b)?;
            b[f][j] -= 2.0 * h;
            let fm = loss_at(model.params(), &b)?;
            worst = worst.max(rel((fp - fm) / (2.0 * h), grads["beta"].data()[f * beta_len + j]));
            count += 1;
        }
    }
    Ok((worst, count))
}

fn gradients() -> Outcome {
    let mut rng = seeded(1001);
    let mut cases = 0;
    let mut worst = (0.0_f64, "");
    for _ in 0..4 {
        for case in op_cases(&mut rng) {
            let e = weighted_check(&case, &mut rng)?;
            if e > worst.0 {
                worst = (e, case.name);
            }
            cases += 1;
        }
    }
    ensure(cases >= 100, || format!("only {cases} micro-cases"))?;
    ensure(worst.0 < REL_TOL, || format!("{}: relative error {:.2e}", worst.1, worst.0))?;
    let mut loss_worst = 0.0_f64;
    let mut coords = 0;
    for (channels, seed) in [(1, 11), (2, 12), (2, 13)] {
        let (e, n) = loss_check(channels, seed)?;
        loss_worst = loss_worst.max(e);
        coords += n;
    }
    ensure(loss_worst < REL_TOL, || format!("training loss: relative error {loss_worst:.2e}"))?;
    Ok(format!(
        "{cases} op cases, worst {:.1e} ({}); loss over {coords} coordinates, worst {loss_worst:.1e}",
        worst.0, worst.1
    ))
}

// 2. Stochastic-process invariants ------------------------------------------

fn same_bits(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
}

fn process_invariants() -> Outcome {
    let models: Vec<PiVaeModel> =
        [(1, 1), (1, 2), (2, 1), (2, 2)].iter().enumerate().map(|(i, &(c, d))| random_model(tiny_architecture(c, d), 2000 + i as u64)).collect();
    let mut rng = seeded(2001);
    let tuples = 1000;
    let mut posterior_checks = 0;
    for t in 0..tuples {
        let model = &models[t % models.len()];
        let d = model.input_dim();
        let z = standard_normals(&mut rng, model.latent_dim());
        let n = rng.random_range(1..40);
        let locs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let f = model.evaluate(&z, &locs).map_err(err)?;

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| locs[i].clone()).collect();
        let fp = model.evaluate(&z, &permuted).map_err(err)?;
        let expected: Vec<Vec<f64>> = perm.iter().map(|&i| f[i].clone()).collect();
        ensure(same_bits(&fp, &expected), || format!("tuple {t}: permutation changed values"))?;

        // Superset with extra locations interleaved at random positions.
        let extra = rng.random_range(1..10);
        let mut superset: Vec<(Option<usize>, Vec<f64>)> = locs.iter().cloned().enumerate().map(|(i, l)| (Some(i), l)).collect();
        for _ in 0..extra {
            let at = rng.random_range(0..=superset.len());
            superset.insert(at, (None, (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()));
        }
        let all: Vec<Vec<f64>> = superset.iter().map(|(_, l)| l.clone()).collect();
        let fs = model.evaluate(&z, &all).map_err(err)?;
        let mut restricted = vec![Vec::new(); n];
        for ((orig, _), v) in superset.iter().zip(fs) {
            if let Some(i) = orig {
                restricted[*i] = v;
            }
        }
        ensure(same_bits(&restricted, &f), || format!("tuple {t}: restriction of a superset changed values"))?;

        // The latent posterior is a function of the observation set, not its order.
        if model.channels() == 1 && t < 200 {
            let y = standard_normals(&mut rng, n);
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let noise = NoiseModel::Gaussian { sigma_prior_scale: 1.0 };
            let a = log_posterior(model, &ObservedData::new(locs.clone(), y), &noise, &z, -0.5).map_err(err)?;
            let b = log_posterior(model, &ObservedData::new(permuted.clone(), yp), &noise, &z, -0.5).map_err(err)?;
            ensure(a.total.to_bits() == b.total.to_bits(), || format!("tuple {t}: log posterior depends on order"))?;
            ensure(
                a.gradient.iter().zip(&b.gradient).all(|(p, q)| p.to_bits() == q.to_bits()),
                || format!("tuple {t}: posterior gradient depends on order"),
            )?;
            posterior_checks += 1;
        }
    }
    Ok(format!("{tuples} tuples bit-exact; {posterior_checks} log-posterior permutations bit-exact"))
}

// Shared helpers for the trained-model criteria ------------------------------

fn train(dataset: &PriorDataset, config: &TrainConfig) -> Result<TrainOutcome, String> {
    let t = Instant::now();
    let out = train_prior(dataset, config).map_err(err)?;
    eprintln!(
        "  trained on {} functions in {:.0} s: final loss {:.4}, reconstruction mse {:.4}",
        dataset.len(),
        t.elapsed().as_secs_f64(),
        out.report.final_loss,
        out.report.reconstruction_mse
    );
    Ok(out)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn column(xs: &[f64]) -> Vec<Vec<f64>> {
    xs.iter().map(|&x| vec![x]).collect()
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Type-7 quantile of an unsorted sample.
fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let (lo, frac) = (h.floor() as usize, h - h.floor());
    if lo + 1 < v.len() {
        v[lo] + frac * (v[lo + 1] - v[lo])
    } else {
        v[lo]
    }
}

// 3. 1-D GP regression --------------------------------------------------------

fn gp_regression() -> Outcome {
    let lengthscale = 8.0;
    let domain = [0.0, 40.0];
    let prior = PriorConfig::gp(KernelFamily::Rbf, [lengthscale, lengthscale], 10_000, 50).with_box(domain);
    let dataset = build_prior_dataset(&prior, 3001).map_err(err)?;
    let config = TrainConfig { latent_dim: 10, epochs: 100, adam: AdamConfig::with_lr(3e-3), seed: 3002, ..TrainConfig::default() };
    let model = train(&dataset, &config)?.model;

    // Held-out function: one GP draw at 40 observed and 100 test locations.
    let mut rng = seeded(3003);
    let sigma = 0.1;
    let n_obs = 40;
    let locs: Vec<Vec<f64>> = (0..n_obs + 100).map(|_| vec![rng.random_range(domain[0]..domain[1])]).collect();
    let truth = sample_gp(&KernelSpec::rbf(lengthscale), &locs, &mut rng).map_err(err)?;
    let y: Vec<f64> = truth[..n_obs].iter().map(|f| f + sigma * standard_normal(&mut rng)).collect();
    let data = ObservedData::new(locs[..n_obs].to_vec(), y);
    let test = &locs[n_obs..];

    let post = infer(&model, &data, &NoiseModel::default(), &InferConfig::default()).map_err(err)?;
    let pred = predict(&post, test, &PredictConfig { noise_band: true, ..PredictConfig::default() }).map_err(err)?;
    let band = pred.noisy.as_ref().ok_or("no predictive band")?;
    let inside = band.iter().zip(&truth[n_obs..]).filter(|(s, &f)| s.q025 <= f && f <= s.q975).count();
    let d = &post.diagnostics;
    let max_rhat = d.max_rhat.ok_or("R-hat undefined")?;
    let min_ess = d.min_ess_ratio.ok_or("ESS undefined")?;
    let sigmas: Vec<f64> = post.chains.iter().map(|t| post.sigma_of(t).unwrap()).collect();
    let detail = format!(
        "coverage {inside}/100, max R-hat {max_rhat:.4}, min ESS/N {min_ess:.3}, sigma 95% [{:.3}, {:.3}] (true {sigma})",
        quantile(&sigmas, 0.025),
        quantile(&sigmas, 0.975)
    );
    ensure(inside >= 85, || format!("{detail}: coverage below 85"))?;
    ensure(max_rhat <= 1.01, || format!("{detail}: R-hat above 1.01"))?;
    ensure(min_ess >= 0.5, || format!("{detail}: ESS/N below 0.5"))?;
    Ok(detail)
}

// 4. Cubic task ---------------------------------------------------------------

fn cubic_task() -> Outcome {
    let interval = [-4.0, 4.0];
    let cubic = CubicConfig { interval, ..CubicConfig::default() };
    let dataset = build_prior_dataset(&PriorConfig::cubic(cubic, 10_000, 50), 4001).map_err(err)?;
    let config = TrainConfig { latent_dim: 10, epochs: 60, adam: AdamConfig::with_lr(3e-3), seed: 4002, ..TrainConfig::default() };
    let model = train(&dataset, &config)?.model;

    let mut rng = seeded(4003);
    let x: Vec<f64> = (0..20).map(|_| rng.random_range(interval[0]..interval[1])).collect();
    let y: Vec<f64> = x.iter().map(|x| x.powi(3) + 3.0 * standard_normal(&mut rng)).collect();
    let data = ObservedData::new(column(&x), y.clone());
    let grid = linspace(interval[0], interval[1], 100);
    let truth: Vec<f64> = grid.iter().map(|x| x.powi(3)).collect();

    let noise = NoiseModel::Gaussian { sigma_prior_scale: 10.0 };
    let post = infer(&model, &data, &noise, &InferConfig::default()).map_err(err)?;
    let sigmas: Vec<f64> = post.chains.iter().map(|t| post.sigma_of(t).unwrap()).collect();
    let (lo, hi) = (quantile(&sigmas, 0.025), quantile(&sigmas, 0.975));
    let pred = predict(&post, &column(&grid), &PredictConfig::default()).map_err(err)?;
    let mean: Vec<f64> = pred.function.iter().map(|s| s[0].mean).collect();
    let pivae_rmse = rmse(&mean, &truth);

    let var_y = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    let init = GpRegressor::new(KernelSpec { amplitude: var_y, ..KernelSpec::rbf(2.0) }, 1.0);
    let fit = optimize_gp(&init, &column(&x), &y, &GpOptConfig::default()).map_err(err)?;
    let gp_rmse = rmse(&fit.predict(&column(&grid)).map_err(err)?.mean, &truth);

    let detail = format!(
        "sigma 95% [{lo:.2}, {hi:.2}], RMSE {pivae_rmse:.3} vs GP {gp_rmse:.3} (max R-hat {:.4})",
        post.diagnostics.max_rhat.unwrap_or(f64::NAN)
    );
    ensure(lo <= 3.0 && 3.0 <= hi, || format!("{detail}: interval misses 3"))?;
    ensure(pivae_rmse <= 1.2 * gp_rmse, || format!("{detail}: RMSE more than 20% above the GP's"))?;
    Ok(detail)
}

// 5. LGCP ---------------------------------------------------------------------

fn lgcp_prior() -> LgcpConfig {
    LgcpConfig::new(KernelSpec::rbf(5.0), 0.0, 50.0)
}

fn lgcp_task() -> Outcome {
    let prior = PriorConfig::lgcp(lgcp_prior().with_target(80), 10_000);
    let dataset = build_prior_dataset(&prior, 5001).map_err(err)?;
    let config = TrainConfig { latent_dim: 10, epochs: 100, adam: AdamConfig::with_lr(3e-3), seed: 5002, ..TrainConfig::default() };
    let model = train(&dataset, &config)?.model;

    let truth = sample_lgcp(&lgcp_prior().with_target(100), &mut seeded(5003)).map_err(err)?;
    let horizon = truth.horizon;
    let data = ObservedData::events(&truth.events);
    let noise = NoiseModel::PoissonLgcp { horizon };
    let post = infer(&model, &data, &noise, &InferConfig::default()).map_err(err)?;

    let grid = linspace(0.0, horizon, 100);
    let pred = predict(&post, &column(&grid), &PredictConfig::default()).map_err(err)?;
    let integral = pred.function.last().expect("grid ends at the horizon")[1].mean;
    let true_integral = truth.total_integral();
    let rel = (integral - true_integral).abs() / true_integral;
    let inside = grid
        .iter()
        .zip(&pred.function)
        .filter(|(&t, s)| {
            let g = truth.log_intensity_at(t);
            s[0].q025 <= g && g <= s[0].q975
        })
        .count();
    let detail = format!(
        "{} events on [0, {horizon:.2}]; integral {integral:.2} vs {true_integral:.2} ({:.1}% off); intensity inside band at {inside}/100 points (max R-hat {:.4})",
        truth.events.len(),
        100.0 * rel,
        post.diagnostics.max_rhat.unwrap_or(f64::NAN)
    );
    ensure(truth.events.len() == 100, || format!("{detail}: test draw does not have 100 events"))?;
    ensure(rel <= 0.25, || format!("{detail}: integral error above 25%"))?;
    ensure(inside >= 80, || format!("{detail}: band coverage below 80%"))?;
    Ok(detail)
}

// 6. MCMC calibration -----------------------------------------------------------

/// `N(0, S)` with `S_ij = rho^|i-j|`; the precision matrix is tridiagonal.
struct Ar1Normal {
    dim: usize,
    rho: f64,
}

impl LogDensityTarget for Ar1Normal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> Result<(f64, Vec<f64>), String> {
        let (n, r) = (self.dim, self.rho);
        let s = 1.0 / (1.0 - r * r);
        let mut qx = vec![0.0; n];
        for i in 0..n {
            let diag = if i == 0 || i == n - 1 { 1.0 } else { 1.0 + r * r };
            qx[i] = s * diag * x[i];
            if i > 0 {
                qx[i] -= s * r * x[i - 1];
            }
            if i + 1 < n {
                qx[i] -= s * r * x[i + 1];
            }
        }
        let lp = -0.5 * x.iter().zip(&qx).map(|(a, b)| a * b).sum::<f64>();
        Ok((lp, qx.into_iter().map(|v| -v).collect()))
    }
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn ks_normal(mut x: Vec<f64>) -> f64 {
    let normal = Normal::standard();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal.cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn ar1_chains(rho: f64, chains: usize, len: usize, seed: u64) -> ChainSet {
    let mut rng = seeded(seed);
    ChainSet::from_draws(
        (0..chains)
            .map(|_| {
                let mut x = standard_normal(&mut rng);
                (0..len)
                    .map(|_| {
                        x = rho * x + (1.0 - rho * rho).sqrt() * standard_normal(&mut rng);
                        vec![x]
                    })
                    .collect()
            })
            .collect(),
    )
}

fn mcmc_calibration() -> Outcome {
    // Standard normal: moments and KS distance of the marginal.
    let target = Ar1Normal { dim: 5, rho: 0.0 };
    let set = hmc_sample(&target, &HmcConfig { draws: 5000, seed: 6001, ..HmcConfig::default() }, None).map_err(err)?;
    let mut worst_ks = 0.0_f64;
    for j in 0..5 {
        let x = set.param(j).concat();
        let (m, v) = moments(&x);
        ensure(m.abs() < 0.05 && (v - 1.0).abs() < 0.08, || format!("normal coordinate {j}: mean {m:.3}, var {v:.3}"))?;
        worst_ks = worst_ks.max(ks_normal(x));
    }
    ensure(worst_ks < 0.02, || format!("normal: KS {worst_ks:.4}"))?;
    let r = rhat(&set).map_err(err)?.into_iter().flatten().fold(0.0, f64::max);
    ensure(r < 1.01, || format!("normal: R-hat {r:.4}"))?;

    // Correlated AR(1)-covariance Gaussian: marginals and lag-one correlation.
    let rho = 0.8;
    let target = Ar1Normal { dim: 10, rho };
    let set = hmc_sample(&target, &HmcConfig { draws: 4000, seed: 6002, ..HmcConfig::default() }, None).map_err(err)?;
    let mut worst_corr = 0.0_f64;
    for j in 0..10 {
        let x = set.param(j).concat();
        let (m, v) = moments(&x);
        ensure(m.abs() < 0.1 && (v - 1.0).abs() < 0.12, || format!("AR(1) coordinate {j}: mean {m:.3}, var {v:.3}"))?;
        worst_ks = worst_ks.max(ks_normal(x));
        if j > 0 {
            let prev = set.param(j - 1).concat();
            let xs = set.param(j).concat();
            let c = prev.iter().zip(&xs).map(|(a, b)| a * b).sum::<f64>() / xs.len() as f64;
            worst_corr = worst_corr.max((c - rho).abs());
        }
    }
    ensure(worst_corr < 0.05, || format!("AR(1) target: lag-one correlation off by {worst_corr:.3}"))?;
    ensure(worst_ks < 0.02, || format!("AR(1) target: KS {worst_ks:.4}"))?;

    // ESS estimator against the AR(1) chain's known value (1 - rho) / (1 + rho).
    let mut ess_detail = Vec::new();
    for (rho, seed) in [(0.0, 6003), (0.5, 6004), (0.9, 6005)] {
        let chains = ar1_chains(rho, 4, 20_000, seed);
        let ratio = ess(&chains).map_err(err)?[0].ok_or("ESS undefined")? / 80_000.0;
        let expected = (1.0 - rho) / (1.0 + rho);
        ensure((ratio / expected - 1.0).abs() < 0.15, || format!("AR(1) rho {rho}: ESS/N {ratio:.4}, expected {expected:.4}"))?;
        ess_detail.push(format!("{ratio:.3}/{expected:.3}"));
    }
    Ok(format!(
        "worst KS {worst_ks:.4}, normal R-hat {r:.4}, AR(1) lag-one error {worst_corr:.3}, ESS/N vs theory {}",
        ess_detail.join(", ")
    ))
}

// 7. 2-D interpolation -----------------------------------------------------------

/// Field smooth enough for a 20-dimensional latent: at lengthscale 0.8 on the
/// square, the leading 20 Karhunen-Loeve modes carry over 99% of the variance.
fn interpolation_config() -> BenchmarkConfig {
    let domain = [-1.0, 1.0];
    BenchmarkConfig {
        field: FieldConfig {
            input_dim: 2,
            kernel: KernelSpec::rbf(0.8),
            noise_sd: 0.1,
            n_train: 600,
            n_test: 2000,
            location_box: domain,
            seed: 7001,
        },
        split_seed: 7002,
        prior: PriorConfig::gp(KernelFamily::Rbf, [0.7, 1.2], 10_000, 100).with_input_dim(2).with_box(domain),
        prior_seed: 7003,
        train: TrainConfig {
            latent_dim: 20,
            features: 40,
            centres: 64,
            phi_hidden: vec![40, 40],
            encoder_hidden: vec![128, 64],
            decoder_hidden: vec![64, 128],
            epochs: 100,
            adam: AdamConfig::with_lr(3e-3),
            beta_lr: 0.2,
            kl_weight: 0.1,
            seed: 7004,
            ..TrainConfig::default()
        },
        inference: BenchInference::Mcmc { infer: InferConfig::default() },
        gp: GpBaselineConfig { kernel: KernelSpec::rbf(0.5), noise_var: 0.05, optimize: GpOptConfig::default() },
        record_wall_clock: true,
    }
}

fn interpolation_2d() -> Outcome {
    let report: BenchmarkReport = run_benchmark(&interpolation_config(), None).map_err(err)?;
    let pivae = report.method("pivae").ok_or("no pivae row")?;
    let gp = report.method("exact_gp").ok_or("no exact_gp row")?;
    let detail = format!(
        "test/train MSE: pivae {:.4}/{:.4} (ratio {:.2}), GP {:.4}/{:.4} (ratio {:.2}); {} s vs {} s",
        pivae.test_mse,
        pivae.train_mse,
        pivae.generalisation_ratio(),
        gp.test_mse,
        gp.train_mse,
        gp.generalisation_ratio(),
        pivae.seconds.map_or("?".into(), |s| format!("{s:.0}")),
        gp.seconds.map_or("?".into(), |s| format!("{s:.0}")),
    );
    ensure(pivae.test_mse <= 2.0 * gp.test_mse, || format!("{detail}: pivae test MSE above twice the GP's"))?;
    ensure(pivae.generalisation_ratio() < gp.generalisation_ratio(), || format!("{detail}: ratio not below the GP's"))?;
    Ok(detail)
}

// 8. Reproducibility ---------------------------------------------------------------

/// Every artifact the pipeline writes, as bytes, for a small end-to-end run.
fn pipeline_artifacts(seed: u64) -> Result<Vec<(&'static str, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let prior = PriorConfig::gp(KernelFamily::Rbf, [0.2, 0.5], 128, 20).with_box([0.0, 1.0]);
    let dataset = build_prior_dataset(&prior, seed).map_err(err)?;
    let mut buf = Vec::new();
    formats::write_dataset(&dataset, &mut buf).map_err(err)?;
    out.push(("dataset.jsonl", buf));

    let config = TrainConfig {
        latent_dim: 4,
        features: 8,
        centres: 8,
        phi_hidden: vec![12],
        encoder_hidden: vec![16],
        decoder_hidden: vec![16],
        epochs: 5,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    };
    let trained = train_prior(&dataset, &config).map_err(err)?;
    let mut buf = Vec::new();
    write_model(&trained.model, &mut buf).map_err(err)?;
    out.push(("model.pivae", buf));
    out.push(("train_report.json", serde_json::to_vec(&trained.report).map_err(err)?));
    let model = trained.model;

    let grid = column(&linspace(0.0, 1.0, 15));
    let draws = (0..10).map(|i| generate(&model, &grid, &mut stream(seed, i))).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let mut buf = Vec::new();
    formats::write_function_draws(&grid, &draws, 1, 1, &mut buf).map_err(err)?;
    out.push(("draws.csv", buf));

    let mut rng = seeded(seed);
    let x: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|x| (5.0 * x).sin()).collect();
    let data = ObservedData::new(column(&x), y);
    let ic = InferConfig {
        hmc: HmcConfig { chains: 2, warmup: 100, draws: 100, seed, ..HmcConfig::default() },
        ..InferConfig::default()
    };
    let post = infer(&model, &data, &NoiseModel::default(), &ic).map_err(err)?;
    let mut buf = Vec::new();
    formats::write_chains(&post.chains, &mut buf).map_err(err)?;
    out.push(("chains.csv", buf));
    let pred = predict(&post, &grid, &PredictConfig { noise_band: true, ..PredictConfig::default() }).map_err(err)?;
    let mut buf = Vec::new();
    formats::write_predictions(&pred, &mut buf).map_err(err)?;
    out.push(("predictions.csv", buf));
    out.push(("diagnostics.json", serde_json::to_vec(&post.diagnostics).map_err(err)?));

    let mut bench = interpolation_config();
    bench.field = FieldConfig { n_train: 30, n_test: 30, seed, ..bench.field };
    bench.split_seed = seed;
    bench.inference = BenchInference::Optimize { optimize: Default::default() };
    bench.record_wall_clock = false;
    let report = run_benchmark(&bench, Some(&model_2d(seed)?)).map_err(err)?;
    out.push(("metrics.json", serde_json::to_vec(&report).map_err(err)?));
    Ok(out)
}

fn model_2d(seed: u64) -> Result<PiVaeModel, String> {
    let prior = PriorConfig::gp(KernelFamily::Rbf, [0.3, 1.0], 64, 20).with_input_dim(2).with_box([-1.0, 1.0]);
    let dataset = build_prior_dataset(&prior, seed).map_err(err)?;
    let config = TrainConfig { latent_dim: 4, epochs: 3, seed, ..TrainConfig::default() };
    Ok(train_prior(&dataset, &config).map_err(err)?.model)
}

fn reproducibility() -> Outcome {
    let first = pipeline_artifacts(8001)?;
    #[cfg(feature = "parallel")]
    let second = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(err)?.install(|| pipeline_artifacts(8001))?;
    #[cfg(not(feature = "parallel"))]
    let second = pipeline_artifacts(8001)?;
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    let other = pipeline_artifacts(8002)?;
    let changed = first.iter().zip(&other).filter(|((_, a), (_, b))| a != b).count();
    ensure(changed == first.len(), || format!("only {changed}/{} artifacts depend on the seed", first.len()))?;
    Ok(format!(
        "{} artifacts bit-identical across reruns and thread counts; all change with the seed",
        first.len()
    ))
}
