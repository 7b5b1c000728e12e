use std::fmt;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor, TensorMap};
use super::AutodiffError;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Param(String),
    Const(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Affine(NodeId, NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    SumCols(NodeId),
    PairwiseSqDist(NodeId, NodeId),
    GatherRows(NodeId, NodeId),
    Readout(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    GaussianLogDensity(NodeId, NodeId, NodeId),
    SquaredError(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumCols(_) => "sum_cols",
            Op::PairwiseSqDist(..) => "pairwise_sq_dist",
            Op::GatherRows(..) => "gather_rows",
            Op::Readout(..) => "readout",
            Op::SliceCols(..) => "slice_cols",
            Op::GaussianLogDensity(..) => "gaussian_log_density",
            Op::SquaredError(..) => "squared_error",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    label: Option<String>,
}

/// Where a node sits in the graph, for error messages.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeRef {
    pub index: usize,
    pub op: &'static str,
    pub label: Option<String>,
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.label {
            Some(l) => write!(f, "#{} {} ({l})", self.index, self.op),
            None => write!(f, "#{} {}", self.index, self.op),
        }
    }
}

/// A differentiable expression over dense tensors.
///
/// Nodes are appended in dependency order, so the node list is already a
/// topological order and the graph is acyclic by construction. Shapes are not
/// fixed at build time: one graph can be evaluated on minibatches of varying
/// size, and shape compatibility is checked on every [`Graph::forward`].
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Node values produced by [`Graph::forward`].
#[derive(Clone, Debug)]
pub struct Evaluation {
    values: Vec<Tensor>,
}

impl Evaluation {
    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.values[node.0]
    }

    pub fn scalar(&self, node: NodeId) -> f64 {
        self.values[node.0].data()[0]
    }
}

/// How the smaller operand of an elementwise binary op is stretched.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
    Column,
}

fn broadcast_kind(big: &Tensor, small: &Tensor) -> Option<Broadcast> {
    if big.shape() == small.shape() {
        return Some(Broadcast::Same);
    }
    if small.is_scalar() {
        return Some(Broadcast::Scalar);
    }
    let (r, c) = big.dims()?;
    let (sr, sc) = small.dims()?;
    if sr == 1 && sc == c {
        Some(Broadcast::Row)
    } else if sc == 1 && sr == r {
        Some(Broadcast::Column)
    } else {
        None
    }
}

#[inline]
fn small_index(kind: Broadcast, i: usize, cols: usize) -> usize {
    match kind {
        Broadcast::Same => i,
        Broadcast::Scalar => 0,
        Broadcast::Row => i % cols,
        Broadcast::Column => i / cols,
    }
}

/// Reduces a full-size gradient onto the shape of a broadcast operand.
fn reduce_to(kind: Broadcast, grad: &[f64], cols: usize, target: &Tensor) -> Tensor {
    if kind == Broadcast::Same {
        return target.with_same_shape(grad.to_vec());
    }
    let mut out = vec![0.0; target.len()];
    for (i, g) in grad.iter().enumerate() {
        out[small_index(kind, i, cols)] += g;
    }
    target.with_same_shape(out)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        if let Some(max) = op_inputs(&op).into_iter().map(|n| n.0).max() {
            assert!(max < self.nodes.len(), "node refers to a node that does not exist");
        }
        self.nodes.push(Node { op, label: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Attaches a human-readable label used in error messages.
    pub fn label(&mut self, node: NodeId, label: impl Into<String>) -> NodeId {
        self.nodes[node.0].label = Some(label.into());
        node
    }

    pub fn node_ref(&self, node: NodeId) -> NodeRef {
        let n = &self.nodes[node.0];
        NodeRef { index: node.0, op: n.op.name(), label: n.label.clone() }
    }

    /// Turns every parameter leaf named in `params` into a constant, so later
    /// evaluations need only bind the remaining parameters.
    pub fn freeze(&mut self, params: &TensorMap) {
        for node in &mut self.nodes {
            if let Op::Param(name) = &node.op {
                if let Some(t) = params.get(name) {
                    node.op = Op::Const(t.clone());
                }
            }
        }
    }

    /// A non-differentiable tensor bound by name at evaluation time.
    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Input(name.into()))
    }

    /// A trainable leaf; gradients are reported under its name.
    pub fn param(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Param(name.into()))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    /// `x * w + b` with `b` a row broadcast over the rows of `x * w`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Affine(x, w, b))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn activation(&mut self, a: NodeId, act: Activation) -> NodeId {
        match act {
            Activation::Tanh => self.tanh(a),
            Activation::Relu => self.relu(a),
        }
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: NodeId, offset: f64) -> NodeId {
        self.push(Op::AddScalar(a, offset))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    /// Per-row sums: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumCols(a))
    }

    /// `out[i, m] = |a_i - b_m|^2` for rows `a_i` of `a` and `b_m` of `b`.
    pub fn pairwise_sq_dist(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::PairwiseSqDist(a, b))
    }

    /// Selects rows of `a` by the integer-valued entries of `index`.
    pub fn gather_rows(&mut self, a: NodeId, index: NodeId) -> NodeId {
        self.push(Op::GatherRows(a, index))
    }

    /// Channelwise linear readout `out[i, c] = sum_f phi[i, f] * w[i, c*F + f]`.
    ///
    /// `w` has either one row per row of `phi` or a single row shared by all.
    pub fn readout(&mut self, phi: NodeId, weights: NodeId) -> NodeId {
        self.push(Op::Readout(phi, weights))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        assert!(start < end, "empty column slice");
        self.push(Op::SliceCols(a, start, end))
    }

    /// `sum_i log N(y_i | mean_i, exp(log_sd_i)^2)`; `mean` and `log_sd` broadcast
    /// against `y`.
    pub fn gaussian_log_density(&mut self, y: NodeId, mean: NodeId, log_sd: NodeId) -> NodeId {
        self.push(Op::GaussianLogDensity(y, mean, log_sd))
    }

    /// `sum_i (a_i - b_i)^2`.
    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::SquaredError(a, b))
    }

    /// `KL(N(mu, diag(sd^2)) || N(0, I))` summed over all entries, built from
    /// primitive nodes so it is differentiable in both arguments.
    pub fn gaussian_kl(&mut self, mu: NodeId, sd: NodeId) -> NodeId {
        let sd2 = self.square(sd);
        let mu2 = self.square(mu);
        let log_sd = self.log(sd);
        let two_log_sd = self.scale(log_sd, 2.0);
        let t = self.add(sd2, mu2);
        let t = self.sub(t, two_log_sd);
        let t = self.add_scalar(t, -1.0);
        let s = self.sum(t);
        self.scale(s, 0.5)
    }

    /// Evaluates every node.
    pub fn forward(&self, inputs: &TensorMap, params: &TensorMap) -> Result<Evaluation, AutodiffError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = self.eval_node(idx, &node.op, &values, inputs, params)?;
            if !v.all_finite() {
                return Err(AutodiffError::NonFinite { node: self.node_ref(NodeId(idx)) });
            }
            values.push(v);
        }
        Ok(Evaluation { values })
    }

    fn shape_err(&self, idx: usize, detail: String) -> AutodiffError {
        AutodiffError::ShapeMismatch { node: self.node_ref(NodeId(idx)), detail }
    }

    fn eval_node(
        &self,
        idx: usize,
        op: &Op,
        values: &[Tensor],
        inputs: &TensorMap,
        params: &TensorMap,
    ) -> Result<Tensor, AutodiffError> {
        let v = |n: &NodeId| &values[n.0];
        let dims = |t: &Tensor| -> Result<(usize, usize), AutodiffError> {
            t.dims().ok_or_else(|| self.shape_err(idx, format!("rank {} unsupported", t.shape().len())))
        };
        Ok(match op {
            Op::Input(name) => inputs
                .get(name)
                .cloned()
                .ok_or_else(|| AutodiffError::Unbound { name: name.clone(), node: self.node_ref(NodeId(idx)) })?,
            Op::Param(name) => params
                .get(name)
                .cloned()
                .ok_or_else(|| AutodiffError::Unbound { name: name.clone(), node: self.node_ref(NodeId(idx)) })?,
            Op::Const(t) => t.clone(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (a, b) = (v(a), v(b));
                let (big, small, swapped) = if a.len() >= b.len() { (a, b, false) } else { (b, a, true) };
                let kind = broadcast_kind(big, small).ok_or_else(|| {
                    self.shape_err(idx, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()))
                })?;
                let cols = big.cols();
                let sd = small.data();
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add(..) => |x, y| x + y,
                    Op::Sub(..) => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let out = big
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let y = sd[small_index(kind, i, cols)];
                        if swapped {
                            f(y, x)
                        } else {
                            f(x, y)
                        }
                    })
                    .collect();
                big.with_same_shape(out)
            }
            Op::MatMul(a, b) => {
                let ((r, k), (k2, c)) = (dims(v(a))?, dims(v(b))?);
                if k != k2 {
                    return Err(self.shape_err(idx, format!("{r}x{k} times {k2}x{c}")));
                }
                Tensor::matrix(r, c, matmul(v(a).data(), v(b).data(), r, k, c))
            }
            Op::Affine(x, w, b) => {
                let ((r, k), (k2, c)) = (dims(v(x))?, dims(v(w))?);
                if k != k2 {
                    return Err(self.shape_err(idx, format!("{r}x{k} times {k2}x{c}")));
                }
                let bias = v(b);
                if bias.len() != c {
                    return Err(self.shape_err(idx, format!("bias of length {} for {c} outputs", bias.len())));
                }
                let mut out = matmul(v(x).data(), v(w).data(), r, k, c);
                for row in out.chunks_mut(c) {
                    for (o, bv) in row.iter_mut().zip(bias.data()) {
                        *o += bv;
                    }
                }
                Tensor::matrix(r, c, out)
            }
            Op::Tanh(a) => v(a).map(f64::tanh),
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::Exp(a) => v(a).map(f64::exp),
            Op::Log(a) => v(a).map(f64::ln),
            Op::Square(a) => v(a).map(|x| x * x),
            Op::Scale(a, k) => v(a).map(|x| x * k),
            Op::AddScalar(a, k) => v(a).map(|x| x + k),
            Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
            Op::Mean(a) => {
                let t = v(a);
                Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
            }
            Op::SumCols(a) => {
                let (r, c) = dims(v(a))?;
                Tensor::matrix(r, 1, v(a).data().chunks(c).map(|row| row.iter().sum()).collect())
            }
            Op::PairwiseSqDist(a, b) => {
                let ((n, d), (m, d2)) = (dims(v(a))?, dims(v(b))?);
                if d != d2 {
                    return Err(self.shape_err(idx, format!("point dimension {d} vs {d2}")));
                }
                let (ad, bd) = (v(a).data(), v(b).data());
                let mut out = Vec::with_capacity(n * m);
                for i in 0..n {
                    let ai = &ad[i * d..(i + 1) * d];
                    for j in 0..m {
                        let bj = &bd[j * d..(j + 1) * d];
                        out.push(ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum());
                    }
                }
                Tensor::matrix(n, m, out)
            }
            Op::GatherRows(a, index) => {
                let (r, c) = dims(v(a))?;
                let rows = self.row_indices(idx, v(index), r)?;
                let src = v(a).data();
                let mut out = Vec::with_capacity(rows.len() * c);
                for &i in &rows {
                    out.extend_from_slice(&src[i * c..(i + 1) * c]);
                }
                Tensor::matrix(rows.len(), c, out)
            }
            Op::Readout(phi, w) => {
                let ((n, f), (wr, wc)) = (dims(v(phi))?, dims(v(w))?);
                if wc % f != 0 || (wr != n && wr != 1) {
                    return Err(self.shape_err(idx, format!("features {n}x{f} with weights {wr}x{wc}")));
                }
                let ch = wc / f;
                let (pd, wd) = (v(phi).data(), v(w).data());
                let mut out = Vec::with_capacity(n * ch);
                for i in 0..n {
                    let p = &pd[i * f..(i + 1) * f];
                    let wi = if wr == 1 { 0 } else { i };
                    let wrow = &wd[wi * wc..(wi + 1) * wc];
                    for c in 0..ch {
                        out.push(p.iter().zip(&wrow[c * f..(c + 1) * f]).map(|(x, y)| x * y).sum());
                    }
                }
                Tensor::matrix(n, ch, out)
            }
            Op::SliceCols(a, start, end) => {
                let (r, c) = dims(v(a))?;
                if *end > c {
                    return Err(self.shape_err(idx, format!("columns {start}..{end} of {c}")));
                }
                let w = end - start;
                let mut out = Vec::with_capacity(r * w);
                for row in v(a).data().chunks(c) {
                    out.extend_from_slice(&row[*start..*end]);
                }
                Tensor::matrix(r, w, out)
            }
            Op::GaussianLogDensity(y, mean, log_sd) => {
                let (y, m, s) = (v(y), v(mean), v(log_sd));
                let km = broadcast_kind(y, m)
                    .ok_or_else(|| self.shape_err(idx, format!("mean {:?} vs y {:?}", m.shape(), y.shape())))?;
                let ks = broadcast_kind(y, s)
                    .ok_or_else(|| self.shape_err(idx, format!("log_sd {:?} vs y {:?}", s.shape(), y.shape())))?;
                let cols = y.cols();
                let mut total = 0.0;
                for (i, &yi) in y.data().iter().enumerate() {
                    let mi = m.data()[small_index(km, i, cols)];
                    let li = s.data()[small_index(ks, i, cols)];
                    let z = (yi - mi) * (-li).exp();
                    total += -0.5 * z * z - li - 0.5 * LN_2PI;
                }
                Tensor::scalar(total)
            }
            Op::SquaredError(a, b) => {
                let (a, b) = (v(a), v(b));
                if a.len() != b.len() {
                    return Err(self.shape_err(idx, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                Tensor::scalar(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum())
            }
        })
    }

    fn row_indices(&self, idx: usize, index: &Tensor, rows: usize) -> Result<Vec<usize>, AutodiffError> {
        index
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 && x.fract() == 0.0 && (x as usize) < rows {
                    Ok(x as usize)
                } else {
                    Err(self.shape_err(idx, format!("row index {x} out of range for {rows} rows")))
                }
            })
            .collect()
    }

    /// Reverse-mode gradients of a scalar node with respect to every parameter leaf
    /// it depends on. Parameters that do not influence `output` get zero gradients.
    pub fn backward(&self, eval: &Evaluation, output: NodeId) -> Result<TensorMap, AutodiffError> {
        let out_val = eval.value(output);
        if !out_val.is_scalar() {
            return Err(AutodiffError::NonScalarOutput {
                node: self.node_ref(output),
                shape: out_val.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(out_val.with_same_shape(vec![1.0]));
        let mut grads = TensorMap::new();

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !g.all_finite() {
                return Err(AutodiffError::NonFiniteGradient { node: self.node_ref(NodeId(idx)) });
            }
            let node = &self.nodes[idx];
            let val = |n: &NodeId| &eval.values[n.0];
            let gd = g.data();
            match &node.op {
                Op::Input(_) | Op::Const(_) => {}
                Op::Param(name) => {
                    if let Some(existing) = grads.get_mut(name) {
                        let existing: &mut Tensor = existing;
                        for (e, x) in existing.data_mut().iter_mut().zip(gd) {
                            *e += x;
                        }
                    } else {
                        grads.insert(name.clone(), g.clone());
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let a_big = av.len() >= bv.len();
                    let (big, small) = if a_big { (av, bv) } else { (bv, av) };
                    let kind = broadcast_kind(big, small).expect("checked in forward");
                    let cols = big.cols();
                    // Full-size gradients w.r.t. the big and (stretched) small operand.
                    let (g_big, g_small): (Vec<f64>, Vec<f64>) = match &node.op {
                        Op::Add(..) => (gd.to_vec(), gd.to_vec()),
                        Op::Sub(..) => {
                            let neg: Vec<f64> = gd.iter().map(|x| -x).collect();
                            if a_big {
                                (gd.to_vec(), neg)
                            } else {
                                (neg, gd.to_vec())
                            }
                        }
                        _ => {
                            let sd = small.data();
                            let gb = gd
                                .iter()
                                .enumerate()
                                .map(|(i, x)| x * sd[small_index(kind, i, cols)])
                                .collect();
                            let gs = gd.iter().zip(big.data()).map(|(x, y)| x * y).collect();
                            (gb, gs)
                        }
                    };
                    let tb = big.with_same_shape(g_big);
                    let ts = reduce_to(kind, &g_small, cols, small);
                    let (ga, gb) = if a_big { (tb, ts) } else { (ts, tb) };
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::MatMul(a, b) => {
                    let ((r, k), (_, c)) = (val(a).dims().unwrap(), val(b).dims().unwrap());
                    let ga = matmul_nt(gd, val(b).data(), r, c, k);
                    let gb = matmul_tn(val(a).data(), gd, r, k, c);
                    accumulate(&mut adj, *a, val(a).with_same_shape(ga));
                    accumulate(&mut adj, *b, val(b).with_same_shape(gb));
                }
                Op::Affine(x, w, b) => {
                    let ((r, k), (_, c)) = (val(x).dims().unwrap(), val(w).dims().unwrap());
                    let gx = matmul_nt(gd, val(w).data(), r, c, k);
                    let gw = matmul_tn(val(x).data(), gd, r, k, c);
                    let mut gbias = vec![0.0; c];
                    for row in gd.chunks(c) {
                        for (o, x) in gbias.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    accumulate(&mut adj, *x, val(x).with_same_shape(gx));
                    accumulate(&mut adj, *w, val(w).with_same_shape(gw));
                    accumulate(&mut adj, *b, val(b).with_same_shape(gbias));
                }
                Op::Tanh(a) => {
                    let y = &eval.values[idx];
                    let ga = gd.iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut adj, *a, y.with_same_shape(ga));
                }
                Op::Relu(a) => {
                    let x = val(a);
                    let ga = gd.iter().zip(x.data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut adj, *a, x.with_same_shape(ga));
                }
                Op::Exp(a) => {
                    let y = &eval.values[idx];
                    let ga = gd.iter().zip(y.data()).map(|(g, y)| g * y).collect();
                    accumulate(&mut adj, *a, y.with_same_shape(ga));
                }
                Op::Log(a) => {
                    let x = val(a);
                    let ga = gd.iter().zip(x.data()).map(|(g, x)| g / x).collect();
                    accumulate(&mut adj, *a, x.with_same_shape(ga));
                }
                Op::Square(a) => {
                    let x = val(a);
                    let ga = gd.iter().zip(x.data()).map(|(g, x)| 2.0 * g * x).collect();
                    accumulate(&mut adj, *a, x.with_same_shape(ga));
                }
                Op::Scale(a, k) => {
                    accumulate(&mut adj, *a, g.map(|x| x * k));
                }
                Op::AddScalar(a, _) => {
                    accumulate(&mut adj, *a, g.clone());
                }
                Op::Sum(a) => {
                    let x = val(a);
                    accumulate(&mut adj, *a, x.with_same_shape(vec![gd[0]; x.len()]));
                }
                Op::Mean(a) => {
                    let x = val(a);
                    let s = gd[0] / x.len() as f64;
                    accumulate(&mut adj, *a, x.with_same_shape(vec![s; x.len()]));
                }
                Op::SumCols(a) => {
                    let x = val(a);
                    let c = x.cols();
                    let ga = (0..x.len()).map(|i| gd[i / c]).collect();
                    accumulate(&mut adj, *a, x.with_same_shape(ga));
                }
                Op::PairwiseSqDist(a, b) => {
                    let ((n, d), (m, _)) = (val(a).dims().unwrap(), val(b).dims().unwrap());
                    let (ad, bd) = (val(a).data(), val(b).data());
                    let mut ga = vec![0.0; n * d];
                    let mut gb = vec![0.0; m * d];
                    for i in 0..n {
                        for j in 0..m {
                            let gij = gd[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for k in 0..d {
                                let diff = 2.0 * gij * (ad[i * d + k] - bd[j * d + k]);
                                ga[i * d + k] += diff;
                                gb[j * d + k] -= diff;
                            }
                        }
                    }
                    accumulate(&mut adj, *a, val(a).with_same_shape(ga));
                    accumulate(&mut adj, *b, val(b).with_same_shape(gb));
                }
                Op::GatherRows(a, index) => {
                    let x = val(a);
                    let c = x.cols();
                    let rows = self.row_indices(idx, val(index), x.rows())?;
                    let mut ga = vec![0.0; x.len()];
                    for (k, &i) in rows.iter().enumerate() {
                        for (o, gv) in ga[i * c..(i + 1) * c].iter_mut().zip(&gd[k * c..(k + 1) * c]) {
                            *o += gv;
                        }
                    }
                    accumulate(&mut adj, *a, x.with_same_shape(ga));
                }
                Op::Readout(phi, w) => {
                    let ((n, f), (wr, wc)) = (val(phi).dims().unwrap(), val(w).dims().unwrap());
                    let ch = wc / f;
                    let (pd, wd) = (val(phi).data(), val(w).data());
                    let mut gp = vec![0.0; n * f];
                    let mut gw = vec![0.0; wr * wc];
                    for i in 0..n {
                        let wi = if wr == 1 { 0 } else { i };
                        for c in 0..ch {
                            let gic = gd[i * ch + c];
                            let base = wi * wc + c * f;
                            for k in 0..f {
                                gp[i * f + k] += gic * wd[base + k];
                                gw[base + k] += gic * pd[i * f + k];
                            }
                        }
                    }
                    accumulate(&mut adj, *phi, val(phi).with_same_shape(gp));
                    accumulate(&mut adj, *w, val(w).with_same_shape(gw));
                }
                Op::SliceCols(a, start, end) => {
                    let x = val(a);
                    let c = x.cols();
                    let w = end - start;
                    let mut ga = vec![0.0; x.len()];
                    for (r, grow) in gd.chunks(w).enumerate() {
                        ga[r * c + start..r * c + end].copy_from_slice(grow);
                    }
                    accumulate(&mut adj, *a, x.with_same_shape(ga));
                }
                Op::GaussianLogDensity(y, mean, log_sd) => {
                    let (yv, mv, sv) = (val(y), val(mean), val(log_sd));
                    let km = broadcast_kind(yv, mv).unwrap();
                    let ks = broadcast_kind(yv, sv).unwrap();
                    let cols = yv.cols();
                    let n = yv.len();
                    let mut gy = vec![0.0; n];
                    let mut gm = vec![0.0; n];
                    let mut gs = vec![0.0; n];
                    for i in 0..n {
                        let mi = mv.data()[small_index(km, i, cols)];
                        let li = sv.data()[small_index(ks, i, cols)];
                        let inv_var = (-2.0 * li).exp();
                        let r = yv.data()[i] - mi;
                        gy[i] = -gd[0] * r * inv_var;
                        gm[i] = gd[0] * r * inv_var;
                        gs[i] = gd[0] * (r * r * inv_var - 1.0);
                    }
                    accumulate(&mut adj, *y, yv.with_same_shape(gy));
                    accumulate(&mut adj, *mean, reduce_to(km, &gm, cols, mv));
                    accumulate(&mut adj, *log_sd, reduce_to(ks, &gs, cols, sv));
                }
                Op::SquaredError(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let ga: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| 2.0 * gd[0] * (x - y)).collect();
                    let gb = ga.iter().map(|x| -x).collect();
                    accumulate(&mut adj, *a, av.with_same_shape(ga));
                    accumulate(&mut adj, *b, bv.with_same_shape(gb));
                }
            }
        }

        // Parameters that the output does not depend on still get an entry.
        for (node, v) in self.nodes.iter().zip(&eval.values) {
            if let Op::Param(name) = &node.op {
                if !grads.contains_key(name) {
                    grads.insert(name.clone(), v.with_same_shape(vec![0.0; v.len()]));
                }
            }
        }
        Ok(grads)
    }
}

fn op_inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Input(_) | Op::Param(_) | Op::Const(_) => vec![],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::MatMul(a, b)
        | Op::PairwiseSqDist(a, b)
        | Op::GatherRows(a, b)
        | Op::Readout(a, b)
        | Op::SquaredError(a, b) => vec![*a, *b],
        Op::Affine(a, b, c) | Op::GaussianLogDensity(a, b, c) => vec![*a, *b, *c],
        Op::Tanh(a)
        | Op::Relu(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Square(a)
        | Op::Scale(a, _)
        | Op::AddScalar(a, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SumCols(a)
        | Op::SliceCols(a, ..) => vec![*a],
    }
}

fn accumulate(adj: &mut [Option<Tensor>], node: NodeId, grad: Tensor) {
    match &mut adj[node.0] {
        Some(existing) => {
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += g;
            }
        }
        slot @ None => *slot = Some(grad),
    }
}
