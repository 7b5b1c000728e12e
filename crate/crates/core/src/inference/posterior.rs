use std::cmp::Ordering;

use crate::autodiff::{Graph, NodeId, Tensor, TensorMap};
use crate::mcmc::LogDensityTarget;
use crate::model::{decoder_graph, PiVaeModel};

use super::{InferenceError, NoiseModel, ObservedData};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The unnormalised log posterior as separate terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LogPosteriorValue {
    pub likelihood: f64,
    /// Latent prior plus, when sampled, the noise prior and log-scale Jacobian.
    pub prior: f64,
    pub total: f64,
    pub gradient: Vec<f64>,
}

/// `log p(y | z, sigma) + log p(z) [+ log p(sigma) + log sigma]` as a function of
/// `theta = (z, log sigma)`, compiled once with the model frozen.
///
/// Observations are put in a canonical order at construction, so any
/// permutation of the same data gives a bit-identical function.
pub struct LogPosterior {
    graph: Graph,
    likelihood: NodeId,
    prior: NodeId,
    total: NodeId,
    /// Nodes with index below this belong to the likelihood.
    prior_start: usize,
    dim: usize,
    latent: usize,
    sigma: bool,
}

fn canonical_order(data: &ObservedData, with_values: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by(|&a, &b| {
        let by_loc = data.locations[a]
            .iter()
            .zip(&data.locations[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal);
        if with_values {
            by_loc.then(data.values[a].total_cmp(&data.values[b]))
        } else {
            by_loc
        }
    });
    idx
}

/// `log sigma` as a node: a constant for fixed noise, else the last coordinate of `theta`.
pub(crate) fn noise_log_sd(g: &mut Graph, theta: NodeId, l: usize, noise: &NoiseModel) -> NodeId {
    match *noise {
        NoiseModel::GaussianFixed { sigma } => g.constant(Tensor::scalar(sigma.ln())),
        _ => g.slice_cols(theta, l, l + 1),
    }
}

/// `log N(z | 0, I)` plus, when `log sigma` is sampled, its half-normal prior
/// on `sigma` and the Jacobian of `sigma = exp(log sigma)`.
pub(crate) fn latent_prior(g: &mut Graph, theta: NodeId, l: usize, noise: &NoiseModel) -> NodeId {
    let z = g.slice_cols(theta, 0, l);
    let z2 = g.square(z);
    let ss = g.sum(z2);
    let lp_z = g.scale(ss, -0.5);
    let mut prior = g.add_scalar(lp_z, -0.5 * l as f64 * LN_2PI);
    if let NoiseModel::Gaussian { sigma_prior_scale: s0 } = *noise {
        let log_sigma = g.slice_cols(theta, l, l + 1);
        let sigma = g.exp(log_sigma);
        let sq = g.square(sigma);
        let quad = g.scale(sq, -0.5 / (s0 * s0));
        let t = g.add(quad, log_sigma);
        let t = g.add_scalar(t, 2f64.ln() - 0.5 * LN_2PI - s0.ln());
        let t = g.sum(t);
        prior = g.add(prior, t);
    }
    g.label(prior, "prior")
}

/// Runs the graph at `theta` and maps non-finite nodes to the term they belong to.
pub(crate) fn evaluate_split(
    graph: &Graph,
    prior_start: usize,
    nodes: [NodeId; 3],
    theta: &[f64],
) -> Result<LogPosteriorValue, InferenceError> {
    use crate::autodiff::AutodiffError;
    let [likelihood, prior, total] = nodes;
    let params = TensorMap::from([("theta".to_string(), Tensor::row(theta.to_vec()))]);
    let component = |index: usize| if index < prior_start { "likelihood" } else { "prior" };
    let eval = graph.forward(&TensorMap::new(), &params).map_err(|e| match e {
        AutodiffError::NonFinite { node } => {
            InferenceError::NonFinite { component: component(node.index), detail: node.to_string() }
        }
        other => InferenceError::Model(other.into()),
    })?;
    let grads = graph.backward(&eval, total).map_err(|e| match e {
        AutodiffError::NonFiniteGradient { node } => {
            InferenceError::NonFinite { component: component(node.index), detail: format!("gradient at {node}") }
        }
        other => InferenceError::Model(other.into()),
    })?;
    Ok(LogPosteriorValue {
        likelihood: eval.scalar(likelihood),
        prior: eval.scalar(prior),
        total: eval.scalar(total),
        gradient: grads["theta"].data().to_vec(),
    })
}

impl LogPosterior {
    pub fn new(model: &PiVaeModel, data: &ObservedData, noise: &NoiseModel) -> Result<Self, InferenceError> {
        noise.validate(model)?;
        let gaussian = !matches!(noise, NoiseModel::PoissonLgcp { .. });
        data.validate(model.input_dim(), gaussian)?;
        let order = canonical_order(data, gaussian);
        let locations: Vec<Vec<f64>> = order.iter().map(|&j| data.locations[j].clone()).collect();
        let l = model.latent_dim();
        let sigma = noise.samples_sigma();
        let dim = l + usize::from(sigma);
        let arch = model.architecture();
        let scale = model.value_scale();

        let mut g = Graph::new();
        let theta = g.param("theta");
        let z = g.slice_cols(theta, 0, l);
        let zero = g.constant(Tensor::scalar(0.0));
        let likelihood = if data.is_empty() && gaussian {
            zero
        } else {
            let beta_hat = decoder_graph(&mut g, arch, z);
            match *noise {
                NoiseModel::PoissonLgcp { horizon } => {
                    // sum_j log lambda(s_j) - Lambda(T), read off the two channels.
                    let mut lik = zero;
                    if !data.is_empty() {
                        let phi = g.constant(model.phi(&locations)?);
                        let out = g.readout(phi, beta_hat);
                        let log_lambda = g.slice_cols(out, 0, 1);
                        let s = g.sum(log_lambda);
                        lik = g.scale(s, scale[0]);
                    }
                    let phi_t = g.constant(model.phi(&[vec![horizon]])?);
                    let out_t = g.readout(phi_t, beta_hat);
                    let big_lambda = g.slice_cols(out_t, 1, 2);
                    let big_lambda = g.scale(big_lambda, scale[1]);
                    let big_lambda = g.sum(big_lambda);
                    g.sub(lik, big_lambda)
                }
                _ => {
                    let phi = g.constant(model.phi(&locations)?);
                    let out = g.readout(phi, beta_hat);
                    let f = g.slice_cols(out, 0, 1);
                    let mean = g.scale(f, scale[0]);
                    let y = g.constant(Tensor::column(order.iter().map(|&j| data.values[j]).collect()));
                    let log_sd = noise_log_sd(&mut g, theta, l, noise);
                    g.gaussian_log_density(y, mean, log_sd)
                }
            }
        };
        let likelihood = g.label(likelihood, "likelihood");
        g.freeze(model.params());
        let prior_start = g.len();

        let prior = latent_prior(&mut g, theta, l, noise);
        let total = g.add(likelihood, prior);
        Ok(Self { graph: g, likelihood, prior, total, prior_start, dim, latent: l, sigma })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    pub fn samples_sigma(&self) -> bool {
        self.sigma
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<LogPosteriorValue, InferenceError> {
        if theta.len() != self.dim {
            return Err(InferenceError::Data(format!("parameter vector of length {}, expected {}", theta.len(), self.dim)));
        }
        evaluate_split(&self.graph, self.prior_start, [self.likelihood, self.prior, self.total], theta)
    }
}

impl LogDensityTarget for LogPosterior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> Result<(f64, Vec<f64>), String> {
        self.evaluate(x).map(|v| (v.total, v.gradient)).map_err(|e| e.to_string())
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.latent).map(|i| format!("z{i}")).collect();
        if self.sigma {
            names.push("log_sigma".into());
        }
        names
    }
}

/// One-shot evaluation at `theta = (z, log sigma)`; `log_sigma` is ignored
/// unless the noise model samples it.
pub fn log_posterior(
    model: &PiVaeModel,
    data: &ObservedData,
    noise: &NoiseModel,
    z: &[f64],
    log_sigma: f64,
) -> Result<LogPosteriorValue, InferenceError> {
    let target = LogPosterior::new(model, data, noise)?;
    let mut theta = z.to_vec();
    if target.samples_sigma() {
        theta.push(log_sigma);
    }
    target.evaluate(&theta)
}
