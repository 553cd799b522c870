//! Per-episode reverse-mode differentiation, Adam, and gradient
//! clipping.
//!
//! The tape records vector-valued primitives during a rollout and
//! replays them in reverse to accumulate parameter gradients. Tapes
//! live for exactly one episode: states that persist across episodes
//! re-enter the next tape as constants.
//!
//! The integration surrogate joins the graph through
//! [`Tape::linearized_scalar`]: its forward value and the
//! fixed-subspace gradient with respect to the newest window sample are
//! computed outside the tape, and backward applies that saved gradient.
//! Older window entries are frozen snapshots and contribute nothing.

use crate::error::{Error, Result};
use crate::gelu::{gelu, gelu_grad};
use crate::params::{ParamRef, StackParams};
use crate::tensor::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatVec { w: ParamRef, x: NodeId },
    AddBias { b: ParamRef, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Gelu { x: NodeId },
    Concat { parts: Vec<NodeId> },
    Mean { parts: Vec<NodeId> },
    TopKMask { x: NodeId, keep: Vec<usize> },
    ScaleConst { x: NodeId, factor: f64 },
    Sum { x: NodeId },
    LogSoftmaxPick { logits: NodeId, index: usize },
    LinearizedScalar { x: NodeId, grad: Vec<f64> },
    AffineSum { terms: Vec<(f64, NodeId)> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Append-only record of one episode's computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; gradients never flow out of it.
    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn input_vector(&mut self, v: &Vector) -> NodeId {
        self.input(v.as_slice().to_vec())
    }

    /// `y = W x` for a parameter matrix.
    pub fn matvec(&mut self, params: &StackParams, w: ParamRef, x: NodeId) -> Result<NodeId> {
        let m = params.tensor(w);
        let xv = &self.nodes[x.0].value;
        if m.cols() != xv.len() {
            return Err(Error::ShapeMismatch(format!(
                "tape matvec {}x{} by {}",
                m.rows(),
                m.cols(),
                xv.len()
            )));
        }
        let mut out = vec![0.0; m.rows()];
        for (i, o) in out.iter_mut().enumerate() {
            let row = m.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(xv.iter()) {
                acc += a * b;
            }
            *o = acc;
        }
        Ok(self.push(out, Op::MatVec { w, x }))
    }

    /// `y = x + b` for a parameter bias stored as an `n x 1` matrix.
    pub fn add_bias(&mut self, params: &StackParams, b: ParamRef, x: NodeId) -> Result<NodeId> {
        let m = params.tensor(b);
        let xv = &self.nodes[x.0].value;
        if m.rows() != xv.len() || m.cols() != 1 {
            return Err(Error::ShapeMismatch("tape add_bias shape".into()));
        }
        let out: Vec<f64> = xv.iter().enumerate().map(|(i, v)| v + m.get(i, 0)).collect();
        Ok(self.push(out, Op::AddBias { b, x }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.len() != bv.len() {
            return Err(Error::ShapeMismatch("tape add length".into()));
        }
        let out: Vec<f64> = av.iter().zip(bv.iter()).map(|(x, y)| x + y).collect();
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|&v| gelu(v)).collect();
        self.push(out, Op::Gelu { x })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(out, Op::Concat { parts: parts.to_vec() })
    }

    /// Elementwise mean of same-length vectors.
    pub fn mean(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidConfig("mean of zero nodes".into()));
        }
        let len = self.nodes[parts[0].0].value.len();
        if parts.iter().any(|p| self.nodes[p.0].value.len() != len) {
            return Err(Error::ShapeMismatch("tape mean length".into()));
        }
        let k = parts.len() as f64;
        let mut out = vec![0.0; len];
        for p in parts {
            for (o, v) in out.iter_mut().zip(self.nodes[p.0].value.iter()) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= k;
        }
        Ok(self.push(out, Op::Mean { parts: parts.to_vec() }))
    }

    /// Keep the `k` largest-magnitude entries (ties broken toward the
    /// lower index), zero the rest. Gradients flow only through kept
    /// positions, matching the local derivative wherever the selection
    /// is stable.
    pub fn top_k_mask(&mut self, x: NodeId, k: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let mut order: Vec<usize> = (0..xv.len()).collect();
        order.sort_by(|&i, &j| {
            xv[j]
                .abs()
                .partial_cmp(&xv[i].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        let mut keep: Vec<usize> = order.into_iter().take(k).collect();
        keep.sort_unstable();
        let mut out = vec![0.0; xv.len()];
        for &i in &keep {
            out[i] = xv[i];
        }
        self.push(out, Op::TopKMask { x, keep })
    }

    /// Multiply by a constant captured at forward time. Used for the
    /// state-norm guard; the factor is treated as locally constant in
    /// backward.
    pub fn scale_const(&mut self, x: NodeId, factor: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v * factor).collect();
        self.push(out, Op::ScaleConst { x, factor })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.iter().sum();
        self.push(vec![s], Op::Sum { x })
    }

    /// `log softmax(logits)[index]`, the log-probability of a chosen
    /// action.
    pub fn log_softmax_pick(&mut self, logits: NodeId, index: usize) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        assert!(index < lv.len());
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = lv.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        let out = lv[index] - log_z;
        self.push(vec![out], Op::LogSoftmaxPick { logits, index })
    }

    /// Custom scalar primitive: forward value plus a saved gradient
    /// with respect to `x`. This is how externally-computed
    /// differentiable quantities (the integration surrogate) enter the
    /// graph.
    pub fn linearized_scalar(&mut self, x: NodeId, value: f64, grad: Vec<f64>) -> Result<NodeId> {
        if grad.len() != self.nodes[x.0].value.len() {
            return Err(Error::ShapeMismatch("linearized_scalar grad length".into()));
        }
        Ok(self.push(vec![value], Op::LinearizedScalar { x, grad }))
    }

    /// `sum_i coef_i * scalar_node_i`.
    pub fn affine_sum(&mut self, terms: &[(f64, NodeId)]) -> Result<NodeId> {
        let mut acc = 0.0;
        for (c, id) in terms {
            let v = &self.nodes[id.0].value;
            if v.len() != 1 {
                return Err(Error::ShapeMismatch("affine_sum over non-scalar".into()));
            }
            acc += c * v[0];
        }
        Ok(self.push(vec![acc], Op::AffineSum { terms: terms.to_vec() }))
    }

    /// Reverse pass from a scalar loss; returns gradients shaped like
    /// the parameter set. Parameters not touched by the graph get zero.
    pub fn backward(&self, params: &StackParams, loss: NodeId) -> Result<StackParams> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "loss must be scalar, got length {}",
                self.nodes[loss.0].value.len()
            )));
        }
        let mut grads = params.zeros_like();
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adj[loss.0][0] = 1.0;

        for idx in (0..=loss.0).rev() {
            if adj[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let go = std::mem::take(&mut adj[idx]);
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::MatVec { w, x } => {
                    let m = params.tensor(*w);
                    let xv = &self.nodes[x.0].value;
                    let gm = grads.tensor_mut(*w);
                    for (i, gi) in go.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        for (j, xj) in xv.iter().enumerate() {
                            let cur = gm.get(i, j);
                            gm.set(i, j, cur + gi * xj);
                        }
                    }
                    let gx = &mut adj[x.0];
                    for (i, gi) in go.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        let row = m.row(i);
                        for (g, a) in gx.iter_mut().zip(row.iter()) {
                            *g += gi * a;
                        }
                    }
                }
                Op::AddBias { b, x } => {
                    let gb = grads.tensor_mut(*b);
                    for (i, gi) in go.iter().enumerate() {
                        let cur = gb.get(i, 0);
                        gb.set(i, 0, cur + gi);
                    }
                    for (g, gi) in adj[x.0].iter_mut().zip(go.iter()) {
                        *g += gi;
                    }
                }
                Op::Add { a, b } => {
                    for (g, gi) in adj[a.0].iter_mut().zip(go.iter()) {
                        *g += gi;
                    }
                    for (g, gi) in adj[b.0].iter_mut().zip(go.iter()) {
                        *g += gi;
                    }
                }
                Op::Gelu { x } => {
                    let xv = self.nodes[x.0].value.clone();
                    for ((g, gi), xi) in adj[x.0].iter_mut().zip(go.iter()).zip(xv.iter()) {
                        *g += gi * gelu_grad(*xi);
                    }
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        for (g, gi) in adj[p.0].iter_mut().zip(go[off..off + len].iter()) {
                            *g += gi;
                        }
                        off += len;
                    }
                }
                Op::Mean { parts } => {
                    let k = parts.len() as f64;
                    for p in parts {
                        for (g, gi) in adj[p.0].iter_mut().zip(go.iter()) {
                            *g += gi / k;
                        }
                    }
                }
                Op::TopKMask { x, keep } => {
                    for &i in keep {
                        adj[x.0][i] += go[i];
                    }
                }
                Op::ScaleConst { x, factor } => {
                    for (g, gi) in adj[x.0].iter_mut().zip(go.iter()) {
                        *g += gi * factor;
                    }
                }
                Op::Sum { x } => {
                    for g in adj[x.0].iter_mut() {
                        *g += go[0];
                    }
                }
                Op::LogSoftmaxPick { logits, index } => {
                    let lv = &self.nodes[logits.0].value;
                    let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = lv.iter().map(|v| (v - max).exp()).sum();
                    for (i, g) in adj[logits.0].iter_mut().enumerate() {
                        let soft = (lv[i] - max).exp() / z;
                        let ind = if i == *index { 1.0 } else { 0.0 };
                        *g += go[0] * (ind - soft);
                    }
                }
                Op::LinearizedScalar { x, grad } => {
                    for (g, gi) in adj[x.0].iter_mut().zip(grad.iter()) {
                        *g += go[0] * gi;
                    }
                }
                Op::AffineSum { terms } => {
                    for (c, id) in terms {
                        adj[id.0][0] += go[0] * c;
                    }
                }
            }
        }
        Ok(grads)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: StackParams,
    v: StackParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &StackParams) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }
}

/// Standard Adam with bias correction.
pub fn adam_update(
    params: &mut StackParams,
    grads: &StackParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::InvalidConfig("learning rate must be positive".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for r in params.refs() {
        let g = grads.tensor(r);
        let p = params.tensor(r);
        if g.rows() != p.rows() || g.cols() != p.cols() {
            return Err(Error::ShapeMismatch("adam gradient shape".into()));
        }
    }
    for r in params.refs() {
        let g = grads.tensor(r).clone();
        let m = state.m.tensor_mut(r);
        for (mi, gi) in m.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
        }
        let v = state.v.tensor_mut(r);
        for (vi, gi) in v.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
        }
        let m = state.m.tensor(r).clone();
        let v = state.v.tensor(r).clone();
        let p = params.tensor_mut(r);
        for ((pi, mi), vi) in p
            .as_mut_slice()
            .iter_mut()
            .zip(m.as_slice())
            .zip(v.as_slice())
        {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *pi -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Scale all gradients so the global L2 norm does not exceed
/// `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut StackParams, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip threshold must be positive");
    let mut sq = 0.0;
    for r in grads.refs() {
        for &g in grads.tensor(r).as_slice() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for r in grads.refs() {
            for g in grads.tensor_mut(r).as_mut_slice() {
                *g *= scale;
            }
        }
    }
    norm
}
