//! Graph builders for the feature map, encoder and decoder.
//!
//! Parameter names are fixed by the architecture; [`Architecture::param_shapes`]
//! lists them in the order they are stored on disk.

use rand::Rng as _;

use crate::autodiff::{Activation, Graph, NodeId, Tensor, TensorMap};
use crate::rng::Rng;

use super::Architecture;

impl Architecture {
    /// Every trainable tensor as `(name, rows, cols)`, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = vec![
            ("phi.centres".to_string(), self.centres, self.input_dim),
            ("phi.log_bw".to_string(), 1, self.centres),
        ];
        let mut dense = |prefix: &str, widths: &[usize], input: usize, out_name: &str, output: usize| {
            let mut prev = input;
            for (i, &w) in widths.iter().enumerate() {
                out.push((format!("{prefix}.h{i}.w"), prev, w));
                out.push((format!("{prefix}.h{i}.b"), 1, w));
                prev = w;
            }
            out.push((format!("{prefix}.{out_name}.w"), prev, output));
            out.push((format!("{prefix}.{out_name}.b"), 1, output));
            prev
        };
        dense("phi", &self.phi_hidden, self.centres, "out", self.features);
        let enc_last = dense("enc", &self.encoder_hidden, self.beta_len(), "mu", self.latent_dim);
        out.push(("enc.log_sd.w".into(), enc_last, self.latent_dim));
        out.push(("enc.log_sd.b".into(), 1, self.latent_dim));
        let mut dec = Vec::new();
        let mut prev = self.latent_dim;
        for (i, &w) in self.decoder_hidden.iter().enumerate() {
            dec.push((format!("dec.h{i}.w"), prev, w));
            dec.push((format!("dec.h{i}.b"), 1, w));
            prev = w;
        }
        dec.push(("dec.out.w".into(), prev, self.beta_len()));
        dec.push(("dec.out.b".into(), 1, self.beta_len()));
        out.extend(dec);
        out
    }

    /// Length of one per-function weight vector, `F * C`.
    pub fn beta_len(&self) -> usize {
        self.features * self.channels
    }

    /// Glorot-uniform weights and zero biases. Centres are spread over `bbox`
    /// (evenly in 1-D, uniformly at random otherwise) and every bandwidth starts
    /// at the median nearest-neighbour distance between centres.
    pub fn init_params(&self, bbox: &[(f64, f64)], rng: &mut Rng) -> TensorMap {
        let mut params = TensorMap::new();
        for (name, r, c) in self.param_shapes() {
            let t = if name == "phi.centres" {
                Tensor::matrix(r, c, self.init_centres(bbox, rng))
            } else if name == "phi.log_bw" {
                Tensor::zeros(r, c)
            } else if name.ends_with(".b") {
                Tensor::zeros(r, c)
            } else {
                let mut limit = (6.0 / (r + c) as f64).sqrt();
                if name.starts_with("enc.log_sd") {
                    limit *= 0.1;
                }
                Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-limit..limit)).collect())
            };
            params.insert(name, t);
        }
        let bw = median_nn_distance(params["phi.centres"].data(), self.centres, self.input_dim);
        params.insert("phi.log_bw".into(), Tensor::filled(1, self.centres, bw.ln()));
        params
    }

    fn init_centres(&self, bbox: &[(f64, f64)], rng: &mut Rng) -> Vec<f64> {
        let m = self.centres;
        if self.input_dim == 1 {
            let (lo, hi) = bbox[0];
            if m == 1 {
                return vec![0.5 * (lo + hi)];
            }
            return (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
        }
        (0..m)
            .flat_map(|_| bbox.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect::<Vec<_>>())
            .collect()
    }
}

fn median_nn_distance(centres: &[f64], m: usize, d: usize) -> f64 {
    if m < 2 {
        return 1.0;
    }
    let mut nn: Vec<f64> = (0..m)
        .map(|i| {
            let ci = &centres[i * d..(i + 1) * d];
            (0..m)
                .filter(|&j| j != i)
                .map(|j| ci.iter().zip(&centres[j * d..(j + 1) * d]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nn.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = nn[m / 2];
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

fn dense_stack(g: &mut Graph, mut x: NodeId, prefix: &str, widths: &[usize], act: Activation) -> NodeId {
    for i in 0..widths.len() {
        let w = g.param(format!("{prefix}.h{i}.w"));
        let b = g.param(format!("{prefix}.h{i}.b"));
        let h = g.affine(x, w, b);
        x = g.activation(h, act);
    }
    x
}

fn linear(g: &mut Graph, x: NodeId, name: &str) -> NodeId {
    let w = g.param(format!("{name}.w"));
    let b = g.param(format!("{name}.b"));
    let y = g.affine(x, w, b);
    g.label(y, name)
}

/// `Phi(s)` for locations `s` (`n x D`): RBF layer `exp(-|s - c_m|^2 / b_m^2)`,
/// hidden layers, then a linear map to `F` features.
pub(crate) fn phi_graph(g: &mut Graph, arch: &Architecture, s: NodeId) -> NodeId {
    let centres = g.param("phi.centres");
    let log_bw = g.param("phi.log_bw");
    let d2 = g.pairwise_sq_dist(s, centres);
    let neg2 = g.scale(log_bw, -2.0);
    let inv_bw2 = g.exp(neg2);
    let scaled = g.mul(d2, inv_bw2);
    let neg = g.scale(scaled, -1.0);
    let rbf = g.exp(neg);
    let rbf = g.label(rbf, "rbf");
    let h = dense_stack(g, rbf, "phi", &arch.phi_hidden, arch.activation);
    linear(g, h, "phi.out")
}

/// `(z_mu, log z_sd)` for weight rows `beta` (`B x FC`).
pub(crate) fn encoder_graph(g: &mut Graph, arch: &Architecture, beta: NodeId) -> (NodeId, NodeId) {
    let h = dense_stack(g, beta, "enc", &arch.encoder_hidden, arch.activation);
    (linear(g, h, "enc.mu"), linear(g, h, "enc.log_sd"))
}

/// `beta_hat = d(z)` for latent rows `z` (`B x L`).
pub(crate) fn decoder_graph(g: &mut Graph, arch: &Architecture, z: NodeId) -> NodeId {
    let h = dense_stack(g, z, "dec", &arch.decoder_hidden, arch.activation);
    linear(g, h, "dec.out")
}
