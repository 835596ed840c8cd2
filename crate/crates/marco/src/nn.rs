//! Minimal reverse-mode automatic differentiation over dense f64
//! matrices — just enough machinery for the graph-transformer policy.
//!
//! A [`Tape`] is an append-only arena of nodes; building an expression
//! records one node per op, `backward` walks the arena in reverse and
//! dispatches a hand-written adjoint per op. Parameters live outside
//! tapes in a named [`ParamSet`]; mounting a parameter onto a tape is
//! memoized, so one rollout touching the same matrix many times gets a
//! single leaf and a single accumulated gradient.
//!
//! Everything is f64 and single-threaded; at the problem sizes this
//! crate trains on (tens of nodes, embedding width ≤ 64) that is fast
//! enough, and it keeps gradients bit-reproducible across runs.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        assert_eq!(rows * cols, data.len(), "shape/data mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn scalar(v: f64) -> Mat {
        Mat { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Mat) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let av = a.data[i * a.cols + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &Mat) -> Mat {
    let mut out = Mat::zeros(a.cols, a.rows);
    for r in 0..a.rows {
        for c in 0..a.cols {
            out.data[c * a.rows + r] = a.data[r * a.cols + c];
        }
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
enum Op {
    /// Constant or parameter; propagates nothing.
    Leaf,
    MatMul(usize, usize),
    /// Elementwise sum of two same-shape nodes.
    Add(usize, usize),
    /// `(n×d) + (1×d)` with the row vector broadcast over rows.
    AddRow(usize, usize),
    /// Elementwise product of two same-shape nodes.
    Mul(usize, usize),
    /// Multiply by a compile-time constant.
    Scale(usize, f64),
    Transpose(usize),
    /// Row-wise softmax.
    SoftmaxRows(usize),
    Tanh(usize),
    /// x · sigmoid(x).
    Silu(usize),
    /// Column means: (n×d) → (1×d).
    MeanRows(usize),
    /// Select row r: (n×d) → (1×d).
    Row(usize, usize),
    /// Row-wise layer normalization with learned gain/bias (1×d each).
    LayerNorm { x: usize, gamma: usize, beta: usize },
    /// Σ_f coeffs[f] · constants[f]; coeffs is a (1×F) node, the
    /// constants are fixed matrices (e.g. per-feature edge matrices).
    LinComb { coeffs: usize, constants: Vec<Mat> },
    /// Negative log-probability of entry `index` under a softmax over a
    /// (1×n) logit row: value = logsumexp(z) − z[index].
    NegLogProbPick { logits: usize, index: usize },
    /// Sum of all entries → (1×1).
    SumAll(usize),
}

struct Node {
    value: Mat,
    grad: Mat,
    op: Op,
}

/// Node handle within one tape.
pub type NodeId = usize;

/// Stable identifier of a parameter in a [`ParamSet`].
pub type ParamId = usize;

/// Named, ordered collection of trainable matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    mats: Vec<Mat>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { names: Vec::new(), mats: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, mat: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name `{name}`"
        );
        self.names.push(name);
        self.mats.push(mat);
        self.mats.len() - 1
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.mats[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.mats[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(|s| s.as_str()).zip(self.mats.iter())
    }

    /// Fresh zero gradient buffers, one per parameter.
    pub fn zero_grads(&self) -> Vec<Mat> {
        self.mats.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect()
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.mats.iter().map(|m| m.data.len()).sum()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

/// Append-only computation record with reverse-mode gradients.
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        let grad = Mat::zeros(value.rows, value.cols);
        self.nodes.push(Node { value, grad, op });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> &Mat {
        &self.nodes[id].grad
    }

    /// Mount a constant (gradient is tracked but goes nowhere).
    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Mount a parameter as a leaf, memoized per tape so repeated use
    /// shares one node (and therefore one gradient accumulator).
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(params.get(id).clone(), Op::Leaf);
        self.param_nodes.insert(id, node);
        node
    }

    /// Add this tape's parameter gradients into `grads` (parallel to
    /// the ParamSet). Call after `backward`.
    pub fn accumulate_param_grads(&self, grads: &mut [Mat]) {
        for (&pid, &node) in &self.param_nodes {
            let g = &self.nodes[node].grad;
            let acc = &mut grads[pid];
            debug_assert!(acc.same_shape(g));
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(&self.nodes[a].value, &self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert!(
            self.nodes[a].value.same_shape(&self.nodes[b].value),
            "add shape mismatch"
        );
        let v = Mat {
            rows: self.nodes[a].value.rows,
            cols: self.nodes[a].value.cols,
            data: self.nodes[a]
                .value
                .data
                .iter()
                .zip(&self.nodes[b].value.data)
                .map(|(x, y)| x + y)
                .collect(),
        };
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (m, r) = (&self.nodes[a].value, &self.nodes[row].value);
        assert_eq!(r.rows, 1, "bias must be a row vector");
        assert_eq!(m.cols, r.cols, "add_row shape mismatch");
        let mut v = m.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] += r.data[j];
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert!(
            self.nodes[a].value.same_shape(&self.nodes[b].value),
            "mul shape mismatch"
        );
        let v = Mat {
            rows: self.nodes[a].value.rows,
            cols: self.nodes[a].value.cols,
            data: self.nodes[a]
                .value
                .data
                .iter()
                .zip(&self.nodes[b].value.data)
                .map(|(x, y)| x * y)
                .collect(),
        };
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = Mat {
            rows: self.nodes[a].value.rows,
            cols: self.nodes[a].value.cols,
            data: self.nodes[a].value.data.iter().map(|x| x * c).collect(),
        };
        self.push(v, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = transpose(&self.nodes[a].value);
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let m = &self.nodes[a].value;
        let mut v = Mat::zeros(m.rows, m.cols);
        for r in 0..m.rows {
            let row = &m.data[r * m.cols..(r + 1) * m.cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                v.data[r * m.cols + j] = e;
                sum += e;
            }
            for j in 0..m.cols {
                v.data[r * m.cols + j] /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = Mat {
            rows: self.nodes[a].value.rows,
            cols: self.nodes[a].value.cols,
            data: self.nodes[a].value.data.iter().map(|x| x.tanh()).collect(),
        };
        self.push(v, Op::Tanh(a))
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = Mat {
            rows: self.nodes[a].value.rows,
            cols: self.nodes[a].value.cols,
            data: self.nodes[a].value.data.iter().map(|&x| x * sigmoid(x)).collect(),
        };
        self.push(v, Op::Silu(a))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let m = &self.nodes[a].value;
        let mut v = Mat::zeros(1, m.cols);
        for r in 0..m.rows {
            for c in 0..m.cols {
                v.data[c] += m.data[r * m.cols + c];
            }
        }
        for c in 0..m.cols {
            v.data[c] /= m.rows as f64;
        }
        self.push(v, Op::MeanRows(a))
    }

    pub fn row(&mut self, a: NodeId, r: usize) -> NodeId {
        let m = &self.nodes[a].value;
        assert!(r < m.rows, "row index out of range");
        let v = Mat::from_vec(1, m.cols, m.data[r * m.cols..(r + 1) * m.cols].to_vec());
        self.push(v, Op::Row(a, r))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let (m, g, b) = (&self.nodes[x].value, &self.nodes[gamma].value, &self.nodes[beta].value);
        assert_eq!(g.rows, 1);
        assert_eq!(b.rows, 1);
        assert_eq!(g.cols, m.cols);
        assert_eq!(b.cols, m.cols);
        let d = m.cols;
        let mut v = Mat::zeros(m.rows, d);
        for r in 0..m.rows {
            let row = &m.data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for c in 0..d {
                v.data[r * d + c] = g.data[c] * (row[c] - mean) * inv + b.data[c];
            }
        }
        self.push(v, Op::LayerNorm { x, gamma, beta })
    }

    /// Linear combination of fixed matrices with learned coefficients:
    /// `Σ_f coeffs[0, f] · constants[f]`.
    pub fn lin_comb(&mut self, coeffs: NodeId, constants: Vec<Mat>) -> NodeId {
        let c = &self.nodes[coeffs].value;
        assert_eq!(c.rows, 1, "coefficients must be a row vector");
        assert_eq!(c.cols, constants.len(), "one coefficient per constant");
        assert!(!constants.is_empty(), "lin_comb needs at least one matrix");
        let (rows, cols) = (constants[0].rows, constants[0].cols);
        let mut v = Mat::zeros(rows, cols);
        for (f, cm) in constants.iter().enumerate() {
            assert!(cm.rows == rows && cm.cols == cols, "lin_comb shape mismatch");
            let w = c.data[f];
            for (o, &x) in v.data.iter_mut().zip(&cm.data) {
                *o += w * x;
            }
        }
        self.push(v, Op::LinComb { coeffs, constants })
    }

    /// `logsumexp(z) − z[index]` for a (1×n) logit row — the negative
    /// log-probability of `index` under the softmax policy.
    pub fn neg_log_prob_pick(&mut self, logits: NodeId, index: usize) -> NodeId {
        let z = &self.nodes[logits].value;
        assert_eq!(z.rows, 1, "logits must be a row vector");
        assert!(index < z.cols, "picked index out of range");
        let max = z.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.data.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let v = Mat::scalar(lse - z.data[index]);
        self.push(v, Op::NegLogProbPick { logits, index })
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Mat::scalar(self.nodes[a].value.data.iter().sum());
        self.push(v, Op::SumAll(a))
    }

    /// Seed `loss` (a 1×1 node) with gradient 1 and propagate backward
    /// through the whole tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        {
            let l = &self.nodes[loss].value;
            assert!(l.rows == 1 && l.cols == 1, "loss must be a scalar node");
            if !l.data[0].is_finite() {
                return Err(Error::NonFinite("loss".into()));
            }
        }
        self.nodes[loss].grad.data[0] = 1.0;

        for id in (0..self.nodes.len()).rev() {
            // Take the node's gradient; ops below push into earlier nodes.
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let g = self.nodes[id].grad.clone();
                    let at = transpose(&self.nodes[a].value);
                    let bt = transpose(&self.nodes[b].value);
                    let da = matmul(&g, &bt);
                    let db = matmul(&at, &g);
                    add_into(&mut self.nodes[a].grad, &da);
                    add_into(&mut self.nodes[b].grad, &db);
                }
                Op::Add(a, b) => {
                    let g = self.nodes[id].grad.clone();
                    add_into(&mut self.nodes[a].grad, &g);
                    add_into(&mut self.nodes[b].grad, &g);
                }
                Op::AddRow(a, row) => {
                    let g = self.nodes[id].grad.clone();
                    add_into(&mut self.nodes[a].grad, &g);
                    let cols = g.cols;
                    for r in 0..g.rows {
                        for c in 0..cols {
                            self.nodes[row].grad.data[c] += g.data[r * cols + c];
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let g = self.nodes[id].grad.clone();
                    let bv = self.nodes[b].value.clone();
                    let av = self.nodes[a].value.clone();
                    for (i, &gv) in g.data.iter().enumerate() {
                        self.nodes[a].grad.data[i] += gv * bv.data[i];
                        self.nodes[b].grad.data[i] += gv * av.data[i];
                    }
                }
                Op::Scale(a, c) => {
                    let g = self.nodes[id].grad.clone();
                    for (i, &gv) in g.data.iter().enumerate() {
                        self.nodes[a].grad.data[i] += gv * c;
                    }
                }
                Op::Transpose(a) => {
                    let g = transpose(&self.nodes[id].grad);
                    add_into(&mut self.nodes[a].grad, &g);
                }
                Op::SoftmaxRows(a) => {
                    let g = &self.nodes[id].grad;
                    let p = &self.nodes[id].value;
                    let cols = p.cols;
                    let mut da = Mat::zeros(p.rows, cols);
                    for r in 0..p.rows {
                        let gr = &g.data[r * cols..(r + 1) * cols];
                        let pr = &p.data[r * cols..(r + 1) * cols];
                        let dot: f64 = gr.iter().zip(pr).map(|(x, y)| x * y).sum();
                        for c in 0..cols {
                            da.data[r * cols + c] = pr[c] * (gr[c] - dot);
                        }
                    }
                    add_into(&mut self.nodes[a].grad, &da);
                }
                Op::Tanh(a) => {
                    let g = self.nodes[id].grad.clone();
                    let t = self.nodes[id].value.clone();
                    for (i, &gv) in g.data.iter().enumerate() {
                        self.nodes[a].grad.data[i] += gv * (1.0 - t.data[i] * t.data[i]);
                    }
                }
                Op::Silu(a) => {
                    let g = self.nodes[id].grad.clone();
                    let x = self.nodes[a].value.clone();
                    for (i, &gv) in g.data.iter().enumerate() {
                        let s = sigmoid(x.data[i]);
                        self.nodes[a].grad.data[i] += gv * (s + x.data[i] * s * (1.0 - s));
                    }
                }
                Op::MeanRows(a) => {
                    let g = self.nodes[id].grad.clone();
                    let rows = self.nodes[a].value.rows;
                    let cols = g.cols;
                    let inv = 1.0 / rows as f64;
                    for r in 0..rows {
                        for c in 0..cols {
                            self.nodes[a].grad.data[r * cols + c] += g.data[c] * inv;
                        }
                    }
                }
                Op::Row(a, r) => {
                    let g = self.nodes[id].grad.clone();
                    let cols = g.cols;
                    for c in 0..cols {
                        self.nodes[a].grad.data[r * cols + c] += g.data[c];
                    }
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let g = self.nodes[id].grad.clone();
                    let xv = self.nodes[x].value.clone();
                    let gam = self.nodes[gamma].value.clone();
                    let d = xv.cols;
                    let dn = d as f64;
                    let mut dx = Mat::zeros(xv.rows, d);
                    for r in 0..xv.rows {
                        let row = &xv.data[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / dn;
                        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dn;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let gr = &g.data[r * d..(r + 1) * d];
                        // h = gamma ⊙ upstream; x̂ = normalized input.
                        let mut h_mean = 0.0;
                        let mut hx_mean = 0.0;
                        for c in 0..d {
                            let xhat = (row[c] - mean) * inv;
                            let h = gam.data[c] * gr[c];
                            h_mean += h;
                            hx_mean += h * xhat;
                            self.nodes[gamma].grad.data[c] += gr[c] * xhat;
                            self.nodes[beta].grad.data[c] += gr[c];
                        }
                        h_mean /= dn;
                        hx_mean /= dn;
                        for c in 0..d {
                            let xhat = (row[c] - mean) * inv;
                            let h = gam.data[c] * gr[c];
                            dx.data[r * d + c] = inv * (h - h_mean - xhat * hx_mean);
                        }
                    }
                    add_into(&mut self.nodes[x].grad, &dx);
                }
                Op::LinComb { coeffs, constants } => {
                    let g = self.nodes[id].grad.clone();
                    for (f, cm) in constants.iter().enumerate() {
                        let dot: f64 = g.data.iter().zip(&cm.data).map(|(x, y)| x * y).sum();
                        self.nodes[coeffs].grad.data[f] += dot;
                    }
                }
                Op::NegLogProbPick { logits, index } => {
                    let gv = self.nodes[id].grad.data[0];
                    let z = self.nodes[logits].value.clone();
                    let max = z.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = z.data.iter().map(|x| (x - max).exp()).sum();
                    for (c, &zv) in z.data.iter().enumerate() {
                        let p = (zv - max).exp() / sum;
                        let delta = if c == index { 1.0 } else { 0.0 };
                        self.nodes[logits].grad.data[c] += gv * (p - delta);
                    }
                }
                Op::SumAll(a) => {
                    let gv = self.nodes[id].grad.data[0];
                    for v in self.nodes[a].grad.data.iter_mut() {
                        *v += gv;
                    }
                }
            }
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn add_into(acc: &mut Mat, g: &Mat) {
    debug_assert!(acc.same_shape(g));
    for (a, b) in acc.data.iter_mut().zip(&g.data) {
        *a += b;
    }
}

/// Fill a matrix with uniform(−1/√fan_in, 1/√fan_in) entries — the
/// initialization used for every projection in the policy.
pub fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl rand::Rng) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Mat::from_vec(rows, cols, data)
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn matmul_known_product() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Mat::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.3 - 2.0).collect()));
        let s = tape.softmax_rows(x);
        for r in 0..3 {
            let sum: f64 = (0..4).map(|c| tape.value(s).get(r, c)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_gradients() {
        let mut rng = rng_from_seed(1);
        let mut ps = ParamSet::new();
        ps.add("a", rand_mat(3, 4, &mut rng));
        ps.add("b", rand_mat(4, 2, &mut rng));
        check_gradients(
            &mut ps,
            |tape, ps| {
                let a = tape.param(ps, 0);
                let b = tape.param(ps, 1);
                let c = tape.matmul(a, b);
                tape.sum_all(c)
            },
            1e-6,
        );
    }

    #[test]
    fn elementwise_op_gradients() {
        let mut rng = rng_from_seed(2);
        let mut ps = ParamSet::new();
        ps.add("a", rand_mat(2, 5, &mut rng));
        ps.add("b", rand_mat(2, 5, &mut rng));
        ps.add("bias", rand_mat(1, 5, &mut rng));
        check_gradients(
            &mut ps,
            |tape, ps| {
                let a = tape.param(ps, 0);
                let b = tape.param(ps, 1);
                let bias = tape.param(ps, 2);
                let m = tape.mul(a, b);
                let s = tape.add_row(m, bias);
                let t = tape.tanh(s);
                let sc = tape.scale(t, 1.7);
                let si = tape.silu(sc);
                let ad = tape.add(si, a);
                tape.sum_all(ad)
            },
            1e-6,
        );
    }

    #[test]
    fn softmax_and_transpose_gradients() {
        let mut rng = rng_from_seed(3);
        let mut ps = ParamSet::new();
        ps.add("a", rand_mat(3, 4, &mut rng));
        ps.add("w", rand_mat(3, 3, &mut rng));
        check_gradients(
            &mut ps,
            |tape, ps| {
                let a = tape.param(ps, 0);
                let w = tape.param(ps, 1);
                let at = tape.transpose(a); // 4×3
                let prod = tape.matmul(at, w); // 4×3
                let sm = tape.softmax_rows(prod);
                // Weight the softmax so its gradient is nontrivial.
                let pt = tape.transpose(sm); // 3×4
                let weighted = tape.mul(pt, a);
                tape.sum_all(weighted)
            },
            1e-6,
        );
    }

    #[test]
    fn mean_and_row_gradients() {
        let mut rng = rng_from_seed(4);
        let mut ps = ParamSet::new();
        ps.add("a", rand_mat(5, 3, &mut rng));
        check_gradients(
            &mut ps,
            |tape, ps| {
                let a = tape.param(ps, 0);
                let m = tape.mean_rows(a);
                let r = tape.row(a, 2);
                let s = tape.add(m, r);
                let t = tape.tanh(s);
                tape.sum_all(t)
            },
            1e-6,
        );
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = rng_from_seed(5);
        let mut ps = ParamSet::new();
        ps.add("x", rand_mat(4, 6, &mut rng));
        ps.add("gamma", rand_mat(1, 6, &mut rng));
        ps.add("beta", rand_mat(1, 6, &mut rng));
        check_gradients(
            &mut ps,
            |tape, ps| {
                let x = tape.param(ps, 0);
                let g = tape.param(ps, 1);
                let b = tape.param(ps, 2);
                let ln = tape.layer_norm(x, g, b);
                let t = tape.tanh(ln);
                tape.sum_all(t)
            },
            1e-5,
        );
    }

    #[test]
    fn lin_comb_gradients() {
        let mut rng = rng_from_seed(6);
        let mut ps = ParamSet::new();
        ps.add("coeffs", rand_mat(1, 3, &mut rng));
        let consts: Vec<Mat> =
            (0..3).map(|_| rand_mat(4, 4, &mut rng)).collect();
        check_gradients(
            &mut ps,
            move |tape, ps| {
                let c = tape.param(ps, 0);
                let lc = tape.lin_comb(c, consts.clone());
                let t = tape.tanh(lc);
                tape.sum_all(t)
            },
            1e-6,
        );
    }

    #[test]
    fn neg_log_prob_gradients() {
        let mut rng = rng_from_seed(7);
        let mut ps = ParamSet::new();
        ps.add("z", rand_mat(1, 6, &mut rng));
        check_gradients(
            &mut ps,
            |tape, ps| {
                let z = tape.param(ps, 0);
                let scaled = tape.scale(z, 2.5);
                tape.neg_log_prob_pick(scaled, 3)
            },
            1e-6,
        );
    }

    #[test]
    fn neg_log_prob_matches_direct_formula() {
        let mut tape = Tape::new();
        let z = tape.constant(Mat::from_vec(1, 3, vec![1.0, 2.0, 0.5]));
        let nlp = tape.neg_log_prob_pick(z, 1);
        let probs: Vec<f64> = {
            let exps: Vec<f64> = [1.0f64, 2.0, 0.5].iter().map(|x| x.exp()).collect();
            let s: f64 = exps.iter().sum();
            exps.iter().map(|e| e / s).collect()
        };
        assert!((tape.value(nlp).data[0] - (-probs[1].ln())).abs() < 1e-12);
    }

    #[test]
    fn param_mounting_is_memoized() {
        let mut rng = rng_from_seed(8);
        let mut ps = ParamSet::new();
        let w = ps.add("w", rand_mat(3, 3, &mut rng));
        let mut tape = Tape::new();
        let a = tape.param(&ps, w);
        let b = tape.param(&ps, w);
        assert_eq!(a, b);
        // Using the same param twice accumulates both contributions.
        let prod = tape.matmul(a, b);
        let loss = tape.sum_all(prod);
        tape.backward(loss).unwrap();
        let mut grads = ps.zero_grads();
        tape.accumulate_param_grads(&mut grads);
        // d(sum(W·W))/dW = ones·Wᵀ + Wᵀ·ones; verify against finite diff.
        check_gradients(
            &mut ps,
            |tape, ps| {
                let a = tape.param(ps, 0);
                let prod = tape.matmul(a, a);
                tape.sum_all(prod)
            },
            1e-6,
        );
    }

    #[test]
    fn backward_rejects_non_finite_loss() {
        let mut tape = Tape::new();
        let z = tape.constant(Mat::scalar(f64::NAN));
        assert!(tape.backward(z).is_err());
    }

    #[test]
    fn init_uniform_respects_fan_in_bound() {
        let mut rng = rng_from_seed(9);
        let m = init_uniform(20, 30, 25, &mut rng);
        let bound = 1.0 / 5.0;
        assert!(m.data.iter().all(|v| v.abs() < bound));
        // Not degenerate.
        assert!(m.data.iter().any(|v| v.abs() > bound / 10.0));
    }
}
