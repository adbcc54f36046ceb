//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] borrows a parameter store and records every operation of a
//! forward pass as a node. [`Tape::backward`] walks the nodes in reverse and
//! returns exact gradients for every parameter that the loss touched.
//! Operations are the handful a transformer needs; each one carries its own
//! backward rule.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Matrix};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Constant,
    Param(usize),
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
    },
    Add(NodeId, NodeId),
    AddRow {
        x: NodeId,
        bias: NodeId,
    },
    Scale(NodeId, f64),
    Relu(NodeId),
    Mask(NodeId, Rc<Vec<f64>>),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    CrossEntropy {
        logp: NodeId,
        target: Matrix,
        denom: f64,
    },
    WeightedSum(Vec<(NodeId, f64)>),
}

struct Node {
    value: Option<Matrix>,
    op: Op,
}

/// Gradients keyed by parameter index; `None` for untouched parameters.
pub type ParamGrads = Vec<Option<Matrix>>;

pub struct Tape<'p> {
    params: &'p [Matrix],
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    recording: bool,
}

impl<'p> Tape<'p> {
    /// A tape that records for a later [`Tape::backward`].
    pub fn new(params: &'p [Matrix]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            recording: true,
        }
    }

    /// A tape for evaluation only; `backward` on it is an error.
    pub fn inference(params: &'p [Matrix]) -> Self {
        Tape {
            recording: false,
            ..Tape::new(params)
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn params(&self) -> &'p [Matrix] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(i) => &self.params[i],
            _ => node.value.as_ref().expect("non-param node has a value"),
        }
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.data[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value: Some(value), op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// The node for parameter `index`; created once per tape.
    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(index),
        });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes[index] = Some(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(va.rows, vb.cols);
        gemm(va, false, vb, false, &mut out, 0.0);
        self.push(out, Op::MatMul { a, b, trans_b: false })
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(va.rows, vb.rows);
        gemm(va, false, vb, true, &mut out, 0.0);
        self.push(out, Op::MatMul { a, b, trans_b: true })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a 1×n row to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let b = self.value(bias);
        debug_assert_eq!(b.rows, 1);
        for r in 0..out.rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow { x, bias })
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let mut out = self.value(x).clone();
        out.scale(s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu(x))
    }

    /// Elementwise product with a fixed mask (used for dropout).
    pub fn mask(&mut self, x: NodeId, mask: Vec<f64>) -> NodeId {
        let mut out = self.value(x).clone();
        for (o, m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Mask(x, Rc::new(mask)))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let vx = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let n = vx.cols;
        let mut xhat = vec![0.0; vx.len()];
        let mut inv_std = vec![0.0; vx.rows];
        let mut out = Matrix::zeros(vx.rows, n);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            let orow = out.row_mut(r);
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                orow[c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Row-wise softmax. With `causal`, entry (i, j) for j > i is masked out.
    /// A row with no columns stays empty.
    pub fn softmax(&mut self, x: NodeId, causal: bool) -> NodeId {
        let vx = self.value(x);
        let mut out = Matrix::zeros(vx.rows, vx.cols);
        for r in 0..vx.rows {
            let width = if causal { (r + 1).min(vx.cols) } else { vx.cols };
            let row = &vx.row(r)[..width];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let orow = out.row_mut(r);
            let mut z = 0.0;
            for c in 0..width {
                let e = (row[c] - m).exp();
                orow[c] = e;
                z += e;
            }
            for v in &mut orow[..width] {
                *v /= z;
            }
        }
        self.push(out, Op::Softmax(x))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let mut out = Matrix::zeros(vx.rows, vx.cols);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        self.push(out, Op::LogSoftmax(x))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> NodeId {
        let vx = self.value(x);
        let mut out = Matrix::zeros(vx.rows, width);
        for r in 0..vx.rows {
            out.row_mut(r).copy_from_slice(&vx.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols].copy_from_slice(v.row(r));
            }
            off += v.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// `-(1/denom) · Σ_rows Σ_v target[r,v] · logp[r,v]`, a 1×1 node.
    ///
    /// Target entries that are exactly zero contribute nothing, even where
    /// `logp` is `-inf`.
    pub fn cross_entropy(&mut self, logp: NodeId, target: Matrix, denom: f64) -> NodeId {
        let lp = self.value(logp);
        debug_assert_eq!(lp.shape(), target.shape());
        let mut total = 0.0;
        for (q, l) in target.data.iter().zip(&lp.data) {
            if *q != 0.0 {
                total -= q * l;
            }
        }
        let out = Matrix::from_vec(1, 1, vec![total / denom]);
        self.push(out, Op::CrossEntropy { logp, target, denom })
    }

    /// `Σ w_i · x_i` over 1×1 nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let total = terms.iter().map(|&(id, w)| w * self.scalar(id)).sum();
        self.push(Matrix::from_vec(1, 1, vec![total]), Op::WeightedSum(terms.to_vec()))
    }

    /// Exact gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<ParamGrads> {
        if !self.recording || self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::NoRecordedForward);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::ShapeMismatch("loss node must be 1x1".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        let mut out: ParamGrads = vec![None; self.params.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(p) => out[*p] = Some(g),
                Op::MatMul { a, b, trans_b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    // dA = G · op(B)ᵀ
                    let mut da = Matrix::zeros(va.rows, va.cols);
                    gemm(&g, false, vb, !*trans_b, &mut da, 0.0);
                    accumulate(&mut grads, *a, da);
                    // dB = Aᵀ · G, or Gᵀ · A when B was transposed
                    let mut db = Matrix::zeros(vb.rows, vb.cols);
                    if *trans_b {
                        gemm(&g, true, va, false, &mut db, 0.0);
                    } else {
                        gemm(va, true, &g, false, &mut db, 0.0);
                    }
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow { x, bias } => {
                    let mut db = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (d, v) in db.data.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale(x, s) => {
                    let mut dx = g;
                    dx.scale(*s);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let vx = self.value(*x);
                    let mut dx = g;
                    for (d, v) in dx.data.iter_mut().zip(&vx.data) {
                        if *v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Mask(x, m) => {
                    let mut dx = g;
                    for (d, mv) in dx.data.iter_mut().zip(m.iter()) {
                        *d *= mv;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let n = g.cols;
                    let mut dg = Matrix::zeros(1, n);
                    let mut db = Matrix::zeros(1, n);
                    let mut dx = Matrix::zeros(g.rows, n);
                    let mut dxhat = vec![0.0; n];
                    for r in 0..g.rows {
                        let grow = g.row(r);
                        let hrow = &xhat[r * n..(r + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for c in 0..n {
                            dg.data[c] += grow[c] * hrow[c];
                            db.data[c] += grow[c];
                            dxhat[c] = grow[c] * gv.data[c];
                            sum_d += dxhat[c];
                            sum_dh += dxhat[c] * hrow[c];
                        }
                        let k = inv_std[r] / n as f64;
                        let drow = dx.row_mut(r);
                        for c in 0..n {
                            drow[c] = k * (n as f64 * dxhat[c] - sum_d - hrow[c] * sum_dh);
                        }
                    }
                    accumulate(&mut grads, *gain, dg);
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Softmax(x) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (d, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *d = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LogSoftmax(x) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let s: f64 = gr.iter().sum();
                        for (d, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *d = gv - yv.exp() * s;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, v) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::SliceCols { x, start } => {
                    let vx = self.value(*x);
                    let mut dx = Matrix::zeros(vx.rows, vx.cols);
                    for r in 0..g.rows {
                        dx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut dp = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::CrossEntropy { logp, target, denom } => {
                    let s = -g.data[0] / denom;
                    let mut dl = target.clone();
                    dl.scale(s);
                    accumulate(&mut grads, *logp, dl);
                }
                Op::WeightedSum(terms) => {
                    for &(id, w) in terms {
                        accumulate(&mut grads, id, Matrix::from_vec(1, 1, vec![w * g.data[0]]));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
