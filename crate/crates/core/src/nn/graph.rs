//! Define-by-run reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records the forward computation for one batch and replays it
//! backward on demand. Parameters are borrowed from a [`ParamStore`];
//! gradients come back as a name-keyed [`Gradients`] map that the trainer
//! accumulates into the store.

use std::borrow::Cow;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::functional as f;
use super::optim::{Gradients, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid node id {0}")]
    InvalidNode(usize),
    #[error("backward target must be scalar, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("target index {index} out of range for vocabulary of {vocab}")]
    TargetOutOfRange { index: usize, vocab: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Param(String),
    GatherRows { src: NodeId, indices: Vec<usize> },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    SliceCols { src: NodeId, from: usize },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddBias { a: NodeId, bias: NodeId },
    Scale { a: NodeId, factor: f64 },
    MatMul { a: NodeId, b: NodeId },
    MatMulBt { a: NodeId, b: NodeId },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, cache: Vec<(f64, f64)> },
    AttentionPool { q: NodeId, k: NodeId, v: NodeId, weights: Tensor },
    Dropout { a: NodeId, mask: Vec<f64> },
    MeanRows { a: NodeId },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, weights: Vec<f64>, probs: Tensor },
    BceWithLogits { logits: NodeId, targets: Vec<f64> },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    needs_grad: bool,
}

pub enum Mode {
    Eval,
    Train { dropout_rng: ChaCha8Rng },
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    mode: Mode,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore, mode: Mode) -> Self {
        Self { params, nodes: Vec::new(), mode }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.as_ref()
    }

    fn val(&self, id: impl std::borrow::Borrow<NodeId>) -> &Tensor {
        self.nodes[id.borrow().0].value.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite forward value");
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant leaf. Never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Borrowed constant leaf; avoids copying large frozen tensors (the
    /// materialized item-feature matrix in scoring paths).
    pub fn input_ref(&mut self, value: &'p Tensor) -> NodeId {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Leaf, needs_grad: false });
        NodeId(self.nodes.len() - 1)
    }

    /// Parameter leaf; the value is borrowed from the store and gradients
    /// are routed back to it by name.
    pub fn param(&mut self, name: &str) -> NodeId {
        let value = self.params.get(name);
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Param(name.to_string()), needs_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    pub fn gather_rows(&mut self, src: NodeId, indices: &[usize]) -> NodeId {
        let s = self.val(src);
        let mut out = Tensor::zeros(indices.len(), s.cols);
        for (i, &idx) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(s.row(idx));
        }
        let needs = self.needs(src);
        self.push(out, Op::GatherRows { src, indices: indices.to_vec() }, needs)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0].0].value.cols;
        let rows: usize = parts.iter().map(|p| self.nodes[p.0].value.rows).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let t = self.val(*p);
            assert_eq!(t.cols, cols, "concat_rows column mismatch");
            out.data[at..at + t.data.len()].copy_from_slice(&t.data);
            at += t.data.len();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatRows { parts: parts.to_vec() }, needs)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.rows;
        let cols: usize = parts.iter().map(|p| self.nodes[p.0].value.cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let t = self.val(*p);
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.row_mut(i)[at..at + t.cols].copy_from_slice(t.row(i));
            }
            at += t.cols;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols { parts: parts.to_vec() }, needs)
    }

    pub fn slice_cols(&mut self, src: NodeId, from: usize, to: usize) -> NodeId {
        let s = self.val(src);
        assert!(from < to && to <= s.cols, "bad column slice {from}..{to} of {}", s.cols);
        let mut out = Tensor::zeros(s.rows, to - from);
        for i in 0..s.rows {
            out.row_mut(i).copy_from_slice(&s.row(i)[from..to]);
        }
        let needs = self.needs(src);
        self.push(out, Op::SliceCols { src, from }, needs)
    }

    fn binary_shapes(&self, a: NodeId, b: NodeId) {
        let (ta, tb) = (self.val(a), self.val(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "elementwise shape mismatch");
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_shapes(a, b);
        let v = {
            let (ta, tb) = (self.val(a), self.val(b));
            Tensor::new(ta.rows, ta.cols, ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect())
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Add { a, b }, needs)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_shapes(a, b);
        let v = {
            let (ta, tb) = (self.val(a), self.val(b));
            Tensor::new(ta.rows, ta.cols, ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect())
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Sub { a, b }, needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_shapes(a, b);
        let v = {
            let (ta, tb) = (self.val(a), self.val(b));
            Tensor::new(ta.rows, ta.cols, ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect())
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul { a, b }, needs)
    }

    /// Broadcast a [1,c] bias over every row of a [r,c] tensor.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let v = {
            let (ta, tb) = (self.val(a), self.val(bias));
            assert_eq!(tb.rows, 1, "bias must be a row vector");
            assert_eq!(ta.cols, tb.cols, "bias width mismatch");
            let mut out = ta.clone();
            for i in 0..out.rows {
                for (o, &b) in out.row_mut(i).iter_mut().zip(&tb.data) {
                    *o += b;
                }
            }
            out
        };
        let needs = self.needs(a) || self.needs(bias);
        self.push(v, Op::AddBias { a, bias }, needs)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.val(a).map(|x| x * factor);
        let needs = self.needs(a);
        self.push(v, Op::Scale { a, factor }, needs)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.val(a).matmul(self.val(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul { a, b }, needs)
    }

    /// a @ b^T.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.val(a).matmul_bt(self.val(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMulBt { a, b }, needs)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).map(|x| x.max(0.0));
        let needs = self.needs(a);
        self.push(v, Op::Relu { a }, needs)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let needs = self.needs(a);
        self.push(v, Op::Sigmoid { a }, needs)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.val(a).map(f64::tanh);
        let needs = self.needs(a);
        self.push(v, Op::Tanh { a }, needs)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let (v, cache) = f::layer_norm(self.val(x), self.val(gain), self.val(bias));
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(v, Op::LayerNorm { x, gain, bias, cache }, needs)
    }

    /// Fused single-head scaled dot-product attention, see
    /// [`functional::attention_pool`](f::attention_pool).
    pub fn attention_pool(&mut self, q: NodeId, k: NodeId, v: NodeId, causal: bool) -> NodeId {
        let (out, weights) = f::attention_pool(self.val(q), self.val(k), self.val(v), causal);
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(out, Op::AttentionPool { q, k, v, weights }, needs)
    }

    /// Inverted dropout. Identity in eval mode.
    pub fn dropout(&mut self, a: NodeId, rate: f64) -> NodeId {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if rate == 0.0 {
            return a;
        }
        let numel = self.val(a).numel();
        let keep = 1.0 - rate;
        let mask: Vec<f64> = match &mut self.mode {
            Mode::Eval => return a,
            Mode::Train { dropout_rng } => (0..numel)
                .map(|_| if dropout_rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
                .collect(),
        };
        let t = self.val(a);
        let v = Tensor::new(t.rows, t.cols, t.data.iter().zip(&mask).map(|(x, m)| x * m).collect());
        let needs = self.needs(a);
        self.push(v, Op::Dropout { a, mask }, needs)
    }

    /// Mean over rows, [r,c] -> [1,c].
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.val(a);
        let mut out = Tensor::zeros(1, t.cols);
        for i in 0..t.rows {
            for (o, &x) in out.data.iter_mut().zip(t.row(i)) {
                *o += x;
            }
        }
        let inv = 1.0 / t.rows as f64;
        out.scale_assign(inv);
        let needs = self.needs(a);
        self.push(out, Op::MeanRows { a }, needs)
    }

    /// Weighted sum of per-row softmax cross-entropies:
    /// loss = sum_i weights[i] * (-log softmax(logits[i])[targets[i]]).
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], weights: &[f64]) -> Result<NodeId, GraphError> {
        let t = self.val(logits);
        assert_eq!(targets.len(), t.rows, "one target per logit row");
        assert_eq!(weights.len(), t.rows, "one weight per logit row");
        for &tg in targets {
            if tg >= t.cols {
                return Err(GraphError::TargetOutOfRange { index: tg, vocab: t.cols });
            }
        }
        let probs = f::softmax_rows(t);
        let mut loss = 0.0;
        for (i, (&tg, &w)) in targets.iter().zip(weights).enumerate() {
            loss += w * f::nll(t.row(i), tg);
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs },
            needs,
        ))
    }

    /// Mean cross-entropy over rows (all weights 1/rows).
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId, GraphError> {
        let n = targets.len();
        let w = vec![1.0 / n as f64; n];
        self.cross_entropy(logits, targets, &w)
    }

    /// Mean binary cross-entropy between sigmoid(logits) and targets;
    /// logits is [r,1], targets are in [0,1].
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[f64]) -> NodeId {
        let t = self.val(logits);
        assert_eq!(t.cols, 1, "bce expects a column of logits");
        assert_eq!(targets.len(), t.rows);
        let mut loss = 0.0;
        for (i, &tg) in targets.iter().enumerate() {
            let l = t.data[i];
            loss += l.max(0.0) - tg * l + (1.0 + (-l.abs()).exp()).ln();
        }
        loss /= t.rows as f64;
        let needs = self.needs(logits);
        self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, targets: targets.to_vec() }, needs)
    }

    /// Reverse pass from a scalar loss. Parameters reachable from the loss
    /// get their gradient; registered but unreachable parameters are simply
    /// absent from the map (their accumulated gradient stays zero).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GraphError> {
        if loss.0 >= self.nodes.len() {
            return Err(GraphError::InvalidNode(loss.0));
        }
        let lt = self.val(loss);
        if lt.numel() != 1 {
            return Err(GraphError::NonScalarLoss(lt.rows, lt.cols));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Param(name) => out.add(name, g),
                Op::GatherRows { src, indices } => {
                    if self.needs(*src) {
                        let st = self.val(*src);
                        let acc = grads[src.0].get_or_insert_with(|| Tensor::zeros(st.rows, st.cols));
                        for (i, &idx) in indices.iter().enumerate() {
                            for (a, &b) in acc.row_mut(idx).iter_mut().zip(g.row(i)) {
                                *a += b;
                            }
                        }
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut at = 0;
                    for p in parts {
                        let t = self.val(*p);
                        let len = t.data.len();
                        if self.needs(*p) {
                            let acc = grads[p.0].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                            for (a, &b) in acc.data.iter_mut().zip(&g.data[at..at + len]) {
                                *a += b;
                            }
                        }
                        at += len;
                    }
                }
                Op::ConcatCols { parts } => {
                    let mut at = 0;
                    for p in parts {
                        let t = self.val(*p);
                        if self.needs(*p) {
                            let acc = grads[p.0].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                            for i in 0..t.rows {
                                for (a, &b) in acc.row_mut(i).iter_mut().zip(&g.row(i)[at..at + t.cols]) {
                                    *a += b;
                                }
                            }
                        }
                        at += t.cols;
                    }
                }
                Op::SliceCols { src, from } => {
                    if self.needs(*src) {
                        let st = self.val(*src);
                        let acc = grads[src.0].get_or_insert_with(|| Tensor::zeros(st.rows, st.cols));
                        for i in 0..g.rows {
                            for (j, &b) in g.row(i).iter().enumerate() {
                                acc.row_mut(i)[from + j] += b;
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    self.accumulate(&mut grads, *a, &g);
                    self.accumulate(&mut grads, *b, &g);
                }
                Op::Sub { a, b } => {
                    self.accumulate(&mut grads, *a, &g);
                    if self.needs(*b) {
                        let neg = g.map(|x| -x);
                        self.accumulate(&mut grads, *b, &neg);
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(*a) {
                        let da = Tensor::new(g.rows, g.cols, g.data.iter().zip(&self.val(b).data).map(|(x, y)| x * y).collect());
                        self.accumulate(&mut grads, *a, &da);
                    }
                    if self.needs(*b) {
                        let db = Tensor::new(g.rows, g.cols, g.data.iter().zip(&self.val(a).data).map(|(x, y)| x * y).collect());
                        self.accumulate(&mut grads, *b, &db);
                    }
                }
                Op::AddBias { a, bias } => {
                    self.accumulate(&mut grads, *a, &g);
                    if self.needs(*bias) {
                        let mut db = Tensor::zeros(1, g.cols);
                        for i in 0..g.rows {
                            for (d, &x) in db.data.iter_mut().zip(g.row(i)) {
                                *d += x;
                            }
                        }
                        self.accumulate(&mut grads, *bias, &db);
                    }
                }
                Op::Scale { a, factor } => {
                    if self.needs(*a) {
                        let da = g.map(|x| x * factor);
                        self.accumulate(&mut grads, *a, &da);
                    }
                }
                Op::MatMul { a, b } => {
                    if self.needs(*a) {
                        let da = g.matmul_bt(self.val(b));
                        self.accumulate(&mut grads, *a, &da);
                    }
                    if self.needs(*b) {
                        let db = self.val(a).matmul_at(&g);
                        self.accumulate(&mut grads, *b, &db);
                    }
                }
                Op::MatMulBt { a, b } => {
                    if self.needs(*a) {
                        let da = g.matmul(self.val(b));
                        self.accumulate(&mut grads, *a, &da);
                    }
                    if self.needs(*b) {
                        let db = g.matmul_at(self.val(a));
                        self.accumulate(&mut grads, *b, &db);
                    }
                }
                Op::Relu { a } => {
                    if self.needs(*a) {
                        let da = Tensor::new(
                            g.rows,
                            g.cols,
                            g.data.iter().zip(&self.val(a).data).map(|(x, &v)| if v > 0.0 { *x } else { 0.0 }).collect(),
                        );
                        self.accumulate(&mut grads, *a, &da);
                    }
                }
                Op::Sigmoid { a } => {
                    if self.needs(*a) {
                        let y = &self.nodes[id].value;
                        let da = Tensor::new(g.rows, g.cols, g.data.iter().zip(&y.data).map(|(x, &s)| x * s * (1.0 - s)).collect());
                        self.accumulate(&mut grads, *a, &da);
                    }
                }
                Op::Tanh { a } => {
                    if self.needs(*a) {
                        let y = &self.nodes[id].value;
                        let da = Tensor::new(g.rows, g.cols, g.data.iter().zip(&y.data).map(|(x, &t)| x * (1.0 - t * t)).collect());
                        self.accumulate(&mut grads, *a, &da);
                    }
                }
                Op::LayerNorm { x, gain, bias, cache } => {
                    let xt = self.val(x);
                    let gt = self.val(gain);
                    let n = xt.cols as f64;
                    let mut dx = Tensor::zeros(xt.rows, xt.cols);
                    let mut dgain = Tensor::zeros(1, xt.cols);
                    let mut dbias = Tensor::zeros(1, xt.cols);
                    for i in 0..xt.rows {
                        let (mean, rstd) = cache[i];
                        let xr = xt.row(i);
                        let gr = g.row(i);
                        // dxhat, and the two row sums the formula needs
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        let mut dxhat = vec![0.0; xt.cols];
                        for j in 0..xt.cols {
                            let xhat = (xr[j] - mean) * rstd;
                            dgain.data[j] += gr[j] * xhat;
                            dbias.data[j] += gr[j];
                            dxhat[j] = gr[j] * gt.data[j];
                            sum_dxhat += dxhat[j];
                            sum_dxhat_xhat += dxhat[j] * xhat;
                        }
                        let dxr = dx.row_mut(i);
                        for j in 0..xt.cols {
                            let xhat = (xr[j] - mean) * rstd;
                            dxr[j] = rstd * (dxhat[j] - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                        }
                    }
                    self.accumulate(&mut grads, *x, &dx);
                    if self.needs(*gain) {
                        self.accumulate(&mut grads, *gain, &dgain);
                    }
                    if self.needs(*bias) {
                        self.accumulate(&mut grads, *bias, &dbias);
                    }
                }
                Op::AttentionPool { q, k, v, weights } => {
                    let qt = self.val(q);
                    let kt = self.val(k);
                    let vt = self.val(v);
                    let scale = 1.0 / (qt.cols as f64).sqrt();
                    // dV = W^T @ dO
                    if self.needs(*v) {
                        let dv = weights.matmul_at(&g);
                        self.accumulate(&mut grads, *v, &dv);
                    }
                    if self.needs(*q) || self.needs(*k) {
                        // dz_ij = dO_i . v_j ; ds = w * (dz - rowsum(w*dz))
                        let dz = g.matmul_bt(vt);
                        let mut ds = Tensor::zeros(weights.rows, weights.cols);
                        for i in 0..weights.rows {
                            let wi = weights.row(i);
                            let dzi = dz.row(i);
                            let dot: f64 = wi.iter().zip(dzi).map(|(w, z)| w * z).sum();
                            for (j, d) in ds.row_mut(i).iter_mut().enumerate() {
                                *d = wi[j] * (dzi[j] - dot) * scale;
                            }
                        }
                        if self.needs(*q) {
                            let dq = ds.matmul(kt);
                            self.accumulate(&mut grads, *q, &dq);
                        }
                        if self.needs(*k) {
                            let dk = ds.matmul_at(qt);
                            self.accumulate(&mut grads, *k, &dk);
                        }
                    }
                }
                Op::Dropout { a, mask } => {
                    if self.needs(*a) {
                        let da = Tensor::new(g.rows, g.cols, g.data.iter().zip(mask).map(|(x, m)| x * m).collect());
                        self.accumulate(&mut grads, *a, &da);
                    }
                }
                Op::MeanRows { a } => {
                    if self.needs(*a) {
                        let t = self.val(a);
                        let inv = 1.0 / t.rows as f64;
                        let mut da = Tensor::zeros(t.rows, t.cols);
                        for i in 0..t.rows {
                            for (d, &x) in da.row_mut(i).iter_mut().zip(&g.data) {
                                *d = x * inv;
                            }
                        }
                        self.accumulate(&mut grads, *a, &da);
                    }
                }
                Op::CrossEntropy { logits, targets, weights, probs } => {
                    if self.needs(*logits) {
                        let gs = g.item();
                        let mut dl = probs.clone();
                        for (i, (&tg, &w)) in targets.iter().zip(weights).enumerate() {
                            let row = dl.row_mut(i);
                            for x in row.iter_mut() {
                                *x *= gs * w;
                            }
                            row[tg] -= gs * w;
                        }
                        self.accumulate(&mut grads, *logits, &dl);
                    }
                }
                Op::BceWithLogits { logits, targets } => {
                    if self.needs(*logits) {
                        let gs = g.item();
                        let t = self.val(logits);
                        let inv = 1.0 / t.rows as f64;
                        let dl = Tensor::new(
                            t.rows,
                            1,
                            t.data.iter().zip(targets).map(|(&l, &tg)| gs * inv * (1.0 / (1.0 + (-l).exp()) - tg)).collect(),
                        );
                        self.accumulate(&mut grads, *logits, &dl);
                    }
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: NodeId, g: &Tensor) {
        if !self.needs(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => acc.add_assign(g),
            slot => {
                *slot = Some(g.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_graph(params: &ParamStore) -> Graph<'_> {
        Graph::new(params, Mode::Eval)
    }

    #[test]
    fn square_gradient() {
        // f(w) = w^2 at w=3 -> grad 6
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(3.0));
        let mut g = eval_graph(&store);
        let w = g.param("w");
        let y = g.mul(w, w);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get("w").unwrap().item(), 6.0);
    }

    #[test]
    fn detached_subgraph_gets_no_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(2.0));
        store.insert("unused", Tensor::scalar(5.0));
        let mut g = eval_graph(&store);
        let w = g.param("w");
        let _dead = g.param("unused");
        let y = g.mul(w, w);
        let grads = g.backward(y).unwrap();
        assert!(grads.get("unused").is_none());
        // accumulating leaves the unused grad at zero
        let mut store2 = store.clone();
        store2.accumulate(&grads);
        assert_eq!(store2.grad("unused").item(), 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(1, 2, vec![1.0, 2.0]));
        let mut g = eval_graph(&store);
        let w = g.param("w");
        assert!(matches!(g.backward(w), Err(GraphError::NonScalarLoss(1, 2))));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut store = ParamStore::new();
        store.insert("l", Tensor::zeros(1, 4));
        let mut g = eval_graph(&store);
        let l = g.param("l");
        let loss = g.cross_entropy_mean(l, &[1]).unwrap();
        assert!((g.value(loss).item() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_sharp_logits_loss_goes_to_zero() {
        let mut store = ParamStore::new();
        let mut t = Tensor::zeros(1, 5);
        t.data[3] = 60.0;
        store.insert("l", t);
        let mut g = eval_graph(&store);
        let l = g.param("l");
        let loss = g.cross_entropy_mean(l, &[3]).unwrap();
        assert!(g.value(loss).item() < 1e-12);
    }

    #[test]
    fn cross_entropy_out_of_range_target() {
        let mut store = ParamStore::new();
        store.insert("l", Tensor::zeros(1, 4));
        let mut g = eval_graph(&store);
        let l = g.param("l");
        assert!(matches!(
            g.cross_entropy_mean(l, &[4]),
            Err(GraphError::TargetOutOfRange { index: 4, vocab: 4 })
        ));
    }

    #[test]
    fn cross_entropy_matches_independent_recomputation() {
        // random logits over vocab 7, loss checked against a direct
        // -log softmax evaluated from the same literals
        let logits = vec![0.31, -1.2, 2.4, 0.05, -0.7, 1.11, -2.2];
        let target = 2usize;
        let mut store = ParamStore::new();
        store.insert("l", Tensor::new(1, 7, logits.clone()));
        let mut g = eval_graph(&store);
        let l = g.param("l");
        let loss = g.cross_entropy_mean(l, &[target]).unwrap();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let expected = z.ln() - logits[target];
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_masks() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::new(1, 8, vec![1.0; 8]));
        let mut g = eval_graph(&store);
        let x = g.param("x");
        let y = g.dropout(x, 0.5);
        assert_eq!(x, y, "eval-mode dropout must be the identity");

        let mut gt = Graph::new(&store, Mode::Train { dropout_rng: crate::rng::derive_rng(1, "drop", &[]) });
        let x = gt.param("x");
        let y = gt.dropout(x, 0.5);
        let vals = &gt.value(y).data;
        assert!(vals.iter().any(|&v| v == 0.0), "some units must drop");
        assert!(vals.iter().any(|&v| v == 2.0), "kept units are rescaled by 1/(1-p)");
    }
}
