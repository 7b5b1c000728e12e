use crate::autodiff::{Graph, NodeId, Tensor, TensorMap};
use crate::priors::FunctionDraw;
use crate::rng::{standard_normals, Rng};

use super::{decoder_graph, encoder_graph, phi_graph, Architecture, ModelError, PiVaeModel};

/// The three terms of the training objective, summed over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    /// `sum (x - beta^T Phi(s))^2`
    pub beta: f64,
    /// `sum (x - beta_hat^T Phi(s))^2`
    pub decoder: f64,
    /// Unweighted KL of the encoder's Gaussian to `N(0, I)`.
    pub kl: f64,
    /// `beta + decoder + kl_weight * kl`
    pub total: f64,
}

impl std::ops::AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.beta += o.beta;
        self.decoder += o.decoder;
        self.kl += o.kl;
        self.total += o.total;
    }
}

/// The objective as a graph. Inputs: `s` (`n x D`), `x` (`n x C`, scaled
/// targets), `idx` (`n x 1`, row of the owning function), `eps` (`B x L`);
/// the per-function weights are the parameter `beta` (`B x FC`).
pub(crate) struct LossGraph {
    pub(super) graph: Graph,
    beta_term: NodeId,
    decoder_term: NodeId,
    kl: NodeId,
    pub(super) total: NodeId,
}

impl LossGraph {
    pub(crate) fn new(arch: &Architecture, kl_weight: f64) -> Self {
        let mut g = Graph::new();
        let s = g.input("s");
        let x = g.input("x");
        let idx = g.input("idx");
        let eps = g.input("eps");
        let beta = g.param("beta");
        let phi = phi_graph(&mut g, arch, s);
        let beta_rows = g.gather_rows(beta, idx);
        let x_beta = g.readout(phi, beta_rows);
        let beta_term = g.squared_error(x, x_beta);
        let (mu, log_sd) = encoder_graph(&mut g, arch, beta);
        let sd = g.exp(log_sd);
        let noise = g.mul(sd, eps);
        let z = g.add(mu, noise);
        let beta_hat = decoder_graph(&mut g, arch, z);
        let hat_rows = g.gather_rows(beta_hat, idx);
        let x_hat = g.readout(phi, hat_rows);
        let decoder_term = g.squared_error(x, x_hat);
        let kl = g.gaussian_kl(mu, sd);
        let weighted = g.scale(kl, kl_weight);
        let recon = g.add(beta_term, decoder_term);
        let total = g.add(recon, weighted);
        let total = g.label(total, "loss");
        Self { graph: g, beta_term, decoder_term, kl, total }
    }

    /// Loss parts and, when `grads` is set, gradients for every parameter
    /// including `beta`.
    pub(crate) fn evaluate(
        &self,
        params: &TensorMap,
        inputs: &TensorMap,
        grads: bool,
    ) -> Result<(LossParts, Option<TensorMap>), ModelError> {
        let eval = self.graph.forward(inputs, params)?;
        let parts = LossParts {
            beta: eval.scalar(self.beta_term),
            decoder: eval.scalar(self.decoder_term),
            kl: eval.scalar(self.kl),
            total: eval.scalar(self.total),
        };
        let g = if grads { Some(self.graph.backward(&eval, self.total)?) } else { None };
        Ok((parts, g))
    }
}

/// Flattens a batch into the loss graph's inputs. Targets are divided by the
/// per-channel `scale`.
pub(crate) fn batch_inputs(
    arch: &Architecture,
    batch: &[&FunctionDraw],
    eps: Tensor,
    scale: &[f64],
) -> Result<TensorMap, ModelError> {
    let ch = arch.channels;
    let mut s = Vec::new();
    let mut x = Vec::new();
    let mut idx = Vec::new();
    for (row, draw) in batch.iter().enumerate() {
        if draw.is_empty() {
            return Err(ModelError::Dataset(format!("draw {} has no locations", draw.id)));
        }
        let have = 1 + usize::from(draw.integral.is_some());
        if have != ch {
            return Err(ModelError::Dataset(format!("draw {} has {have} channels, model has {ch}", draw.id)));
        }
        for k in 0..draw.len() {
            let loc = &draw.locations[k];
            if loc.len() != arch.input_dim {
                return Err(ModelError::Dimension { what: "location", expected: arch.input_dim, got: loc.len() });
            }
            s.extend_from_slice(loc);
            for (c, sc) in scale.iter().enumerate() {
                x.push(draw.target(c, k) / sc);
            }
            idx.push(row as f64);
        }
    }
    let n = idx.len();
    Ok(TensorMap::from([
        ("s".into(), Tensor::matrix(n, arch.input_dim, s)),
        ("x".into(), Tensor::matrix(n, ch, x)),
        ("idx".into(), Tensor::column(idx)),
        ("eps".into(), eps),
    ]))
}

/// Parameters (with `beta`) and graph inputs for one batch, drawing fresh
/// `eps ~ N(0, I)` per function from `rng`.
fn loss_arguments(
    model: &PiVaeModel,
    batch: &[FunctionDraw],
    betas: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<(TensorMap, TensorMap), ModelError> {
    let arch = model.architecture();
    if batch.is_empty() {
        return Err(ModelError::Dataset("empty batch".into()));
    }
    if betas.len() != batch.len() {
        return Err(ModelError::Dimension { what: "beta rows", expected: batch.len(), got: betas.len() });
    }
    for b in betas {
        if b.len() != arch.beta_len() {
            return Err(ModelError::Dimension { what: "beta", expected: arch.beta_len(), got: b.len() });
        }
    }
    let l = arch.latent_dim;
    let eps = Tensor::matrix(batch.len(), l, standard_normals(rng, batch.len() * l));
    let refs: Vec<&FunctionDraw> = batch.iter().collect();
    let inputs = batch_inputs(arch, &refs, eps, model.value_scale())?;
    let mut params = model.params().clone();
    params.insert("beta".into(), Tensor::from_rows(betas));
    Ok((params, inputs))
}

/// Training objective on `batch` with one weight row per function, using
/// fresh `eps ~ N(0, I)` per function from `rng`. Targets are in the model's
/// scaled units.
pub fn pivae_loss(
    model: &PiVaeModel,
    batch: &[FunctionDraw],
    betas: &[Vec<f64>],
    kl_weight: f64,
    rng: &mut Rng,
) -> Result<LossParts, ModelError> {
    let (params, inputs) = loss_arguments(model, batch, betas, rng)?;
    let (parts, _) = LossGraph::new(model.architecture(), kl_weight).evaluate(&params, &inputs, false)?;
    Ok(parts)
}

/// [`pivae_loss`] plus its gradient with respect to every network parameter
/// and, under the key `beta`, the weight rows.
pub fn pivae_loss_gradients(
    model: &PiVaeModel,
    batch: &[FunctionDraw],
    betas: &[Vec<f64>],
    kl_weight: f64,
    rng: &mut Rng,
) -> Result<(LossParts, TensorMap), ModelError> {
    let (params, inputs) = loss_arguments(model, batch, betas, rng)?;
    let (parts, grads) = LossGraph::new(model.architecture(), kl_weight).evaluate(&params, &inputs, true)?;
    Ok((parts, grads.expect("gradients requested")))
}
