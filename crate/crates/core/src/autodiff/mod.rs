//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations; [`Graph::forward`] binds named inputs and
//! parameters and evaluates every node; [`Graph::backward`] returns the gradient
//! of a scalar node with respect to each parameter leaf. [`adam_step`] applies
//! bias-corrected Adam updates to named parameter sets.

mod adam;
mod graph;
mod tensor;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use graph::{Activation, Evaluation, Graph, NodeId, NodeRef};
pub use tensor::{Tensor, TensorMap};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("invalid tensor shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: NodeRef, detail: String },
    #[error("no tensor bound for `{name}` (node {node})")]
    Unbound { name: String, node: NodeRef },
    #[error("non-finite value produced at node {node}")]
    NonFinite { node: NodeRef },
    #[error("non-finite gradient at node {node}")]
    NonFiniteGradient { node: NodeRef },
    #[error("backward needs a scalar output, node {node} has shape {shape:?}")]
    NonScalarOutput { node: NodeRef, shape: Vec<usize> },
    #[error("invalid optimiser hyperparameters: {0}")]
    InvalidHyperparameter(String),
    #[error("gradient for unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("gradient for `{name}` has shape {grad:?}, parameter has {param:?}")]
    GradientShape { name: String, param: Vec<usize>, grad: Vec<usize> },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteParameterGradient(String),
    #[error("standard deviations must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// `KL(N(mu, diag(sd^2)) || N(0, I)) = 0.5 * sum(sd^2 + mu^2 - 1 - 2 ln sd)`.
pub fn gaussian_kl(mu: &[f64], sd: &[f64]) -> Result<f64, AutodiffError> {
    assert_eq!(mu.len(), sd.len(), "mean and sd lengths differ");
    let mut total = 0.0;
    for (&m, &s) in mu.iter().zip(sd) {
        if !(s > 0.0) {
            return Err(AutodiffError::NonPositiveScale(s));
        }
        total += s * s + m * m - 1.0 - 2.0 * s.ln();
    }
    Ok(0.5 * total)
}

/// Largest relative discrepancy between `backward` and central differences
/// with step `h` over every element of every parameter. The denominator is
/// floored at `floor` so vanishing gradients are compared absolutely.
pub fn gradient_check(
    graph: &Graph,
    out: NodeId,
    inputs: &TensorMap,
    params: &TensorMap,
    h: f64,
    floor: f64,
) -> Result<f64, AutodiffError> {
    let eval = graph.forward(inputs, params)?;
    let grads = graph.backward(&eval, out)?;
    let mut worst = 0.0_f64;
    for (name, p) in params {
        for i in 0..p.len() {
            let mut shifted = params.clone();
            shifted.get_mut(name).expect("own key").data_mut()[i] += h;
            let fp = graph.forward(inputs, &shifted)?.scalar(out);
            shifted.get_mut(name).expect("own key").data_mut()[i] -= 2.0 * h;
            let fm = graph.forward(inputs, &shifted)?.scalar(out);
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads[name].data()[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
