//! Reverse-mode automatic differentiation over a recorded operation list.
//!
//! A [`Tape`] is an append-only arena: every operation pushes a node holding
//! its forward value, so inputs always reference earlier nodes and a single
//! reverse sweep propagates gradients. Gradient buffers persist on the tape
//! and accumulate additively across repeated [`Tape::backward`] calls; the
//! caller resets by dropping the tape or calling [`Tape::zero_grads`].

use crate::autodiff::kernel;
use crate::autodiff::params::{Gradients, ParamStore};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    MatMul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Concat(Vec<NodeId>),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    EmbedRow { table: NodeId, row: usize },
    Softmax(NodeId),
    /// `-log softmax(logits)[target]`, fused for stability. `-inf` logits are
    /// allowed (masked actions); the target coordinate must be finite.
    CrossEntropy { logits: NodeId, target: usize },
    Sum(NodeId),
}

struct Node<S> {
    op: Op<S>,
    shape: Vec<usize>,
    values: Vec<S>,
    /// Persistent gradient buffer; empty until the first backward call.
    grad: Vec<S>,
    /// Extra forward results needed by backward (softmax probs for
    /// cross-entropy).
    saved: Vec<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    /// Parameter registrations in call order: (store name, node).
    params: Vec<(String, NodeId)>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<S>, shape: Vec<usize>, values: Vec<S>, saved: Vec<S>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, shape, values, grad: Vec::new(), saved });
        id
    }

    /// Records a constant input. No gradient flows out of the caller's
    /// tensor, but the node itself receives one.
    pub fn leaf(&mut self, t: &Tensor<S>) -> NodeId {
        self.push(Op::Leaf, t.shape().to_vec(), t.values().to_vec(), Vec::new())
    }

    pub fn leaf_vector(&mut self, values: &[S]) -> NodeId {
        self.push(Op::Leaf, vec![values.len()], values.to_vec(), Vec::new())
    }

    pub fn leaf_scalar(&mut self, value: S) -> NodeId {
        self.push(Op::Leaf, vec![1], vec![value], Vec::new())
    }

    /// Records a named parameter from the store and remembers the
    /// association for [`Tape::collect_grads`].
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Result<NodeId> {
        let t = store.get(name)?;
        let id = self.leaf(t);
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: NodeId) -> &[S] {
        &self.nodes[id.0].values
    }

    pub fn tensor(&self, id: NodeId) -> Tensor<S> {
        Tensor::new(self.nodes[id.0].shape.clone(), self.nodes[id.0].values.clone())
            .expect("node shape is consistent")
    }

    /// Gradient of the last backward pass(es); `None` before any backward.
    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        let g = &self.nodes[id.0].grad;
        if g.is_empty() && !self.nodes[id.0].values.is_empty() { None } else { Some(g) }
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.clear();
        }
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{op} expects equal shapes, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "add")?;
        let values: Vec<S> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add(a, b), shape, values, Vec::new()))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "sub")?;
        let values: Vec<S> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Sub(a, b), shape, values, Vec::new()))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "mul")?;
        let values: Vec<S> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Mul(a, b), shape, values, Vec::new()))
    }

    /// Multiplication by a constant that is not differentiated through.
    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        let values: Vec<S> = self.values(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, c), shape, values, Vec::new())
    }

    /// Matrix product. `a` may be rank-1 (treated as a single row, the
    /// result is rank-1); `b` must be rank-2.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k, a_vec) = match self.shape(a) {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            s => return Err(Error::Shape(format!("matmul lhs must be rank 1 or 2, got {s:?}"))),
        };
        let (bk, n) = match self.shape(b) {
            [bk, n] => (*bk, *n),
            s => return Err(Error::Shape(format!("matmul rhs must be rank 2, got {s:?}"))),
        };
        if k != bk {
            return Err(Error::Shape(format!(
                "matmul inner dims disagree: lhs {:?}, rhs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut values = vec![S::zero(); m * n];
        kernel::matmul(self.values(a), self.values(b), m, k, n, &mut values);
        let shape = if a_vec { vec![n] } else { vec![m, n] };
        Ok(self.push(Op::MatMul { a, b, m, k, n }, shape, values, Vec::new()))
    }

    /// Concatenation of rank-1 nodes.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat of zero nodes".into()));
        }
        let mut values = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::Shape(format!(
                    "concat expects rank-1 nodes, got {:?}",
                    self.shape(p)
                )));
            }
            values.extend_from_slice(self.values(p));
        }
        let shape = vec![values.len()];
        Ok(self.push(Op::Concat(parts.to_vec()), shape, values, Vec::new()))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let values: Vec<S> = self.values(a).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Tanh(a), shape, values, Vec::new())
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let values: Vec<S> = self.values(a).iter().map(|&v| kernel::sigmoid(v)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Sigmoid(a), shape, values, Vec::new())
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let values: Vec<S> = self.values(a).iter().map(|v| v.ln()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Log(a), shape, values, Vec::new())
    }

    /// Row selection from a rank-2 table (embedding lookup).
    pub fn embed_row(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let (rows, cols) = match self.shape(table) {
            [r, c] => (*r, *c),
            s => return Err(Error::Shape(format!("embed_row table must be rank 2, got {s:?}"))),
        };
        if row >= rows {
            return Err(Error::UnknownToken { token: row, vocab_size: rows });
        }
        let values = self.values(table)[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(Op::EmbedRow { table, row }, vec![cols], values, Vec::new()))
    }

    /// Probability distribution over a rank-1 logit vector.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        if self.shape(a).len() != 1 {
            return Err(Error::Shape(format!("softmax expects rank 1, got {:?}", self.shape(a))));
        }
        if !self.values(a).iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        let values = kernel::softmax(self.values(a));
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Softmax(a), shape, values, Vec::new()))
    }

    /// `-log softmax(logits)[target]` as a scalar node.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        if self.shape(logits).len() != 1 {
            return Err(Error::Shape(format!(
                "cross_entropy expects rank-1 logits, got {:?}",
                self.shape(logits)
            )));
        }
        let n = self.values(logits).len();
        if target >= n {
            return Err(Error::UnknownToken { token: target, vocab_size: n });
        }
        let log_probs = kernel::log_softmax(self.values(logits));
        let loss = -log_probs[target];
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("cross-entropy loss for target {target}")));
        }
        let probs: Vec<S> = log_probs.iter().map(|&lp| lp.exp()).collect();
        Ok(self.push(Op::CrossEntropy { logits, target }, vec![1], vec![loss], probs))
    }

    /// Sum of all entries as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: S = self.values(a).iter().copied().sum();
        self.push(Op::Sum(a), vec![1], vec![total], Vec::new())
    }

    /// Dot product of two rank-1 nodes.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let prod = self.mul(a, b)?;
        Ok(self.sum(prod))
    }

    /// Reverse sweep from a scalar loss node. Gradients add into the
    /// persistent per-node buffers.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        // Per-call scratch so repeated calls stay additive.
        let mut scratch: Vec<Vec<S>> = self.nodes.iter().map(|n| vec![S::zero(); n.values.len()]).collect();
        scratch[loss.0][0] = S::one();

        for idx in (0..self.nodes.len()).rev() {
            if scratch[idx].iter().all(|g| *g == S::zero()) {
                continue;
            }
            let go = std::mem::take(&mut scratch[idx]);
            let node = &self.nodes[idx];
            match node.op.clone() {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    kernel::add_assign(&mut scratch[a.0], &go);
                    kernel::add_assign(&mut scratch[b.0], &go);
                }
                Op::Sub(a, b) => {
                    kernel::add_assign(&mut scratch[a.0], &go);
                    for (g, &v) in scratch[b.0].iter_mut().zip(&go) {
                        *g -= v;
                    }
                }
                Op::Mul(a, b) => {
                    for i in 0..go.len() {
                        let av = self.nodes[a.0].values[i];
                        let bv = self.nodes[b.0].values[i];
                        scratch[a.0][i] += go[i] * bv;
                        scratch[b.0][i] += go[i] * av;
                    }
                }
                Op::Scale(a, c) => {
                    for (g, &v) in scratch[a.0].iter_mut().zip(&go) {
                        *g += v * c;
                    }
                }
                Op::MatMul { a, b, m, k, n } => {
                    // dA[i,p] += sum_j go[i,j] * B[p,j]; dB[p,j] += sum_i A[i,p] * go[i,j]
                    for i in 0..m {
                        for p in 0..k {
                            let av = self.nodes[a.0].values[i * k + p];
                            let brow = &self.nodes[b.0].values[p * n..(p + 1) * n];
                            let gorow = &go[i * n..(i + 1) * n];
                            let mut acc = S::zero();
                            for j in 0..n {
                                acc += gorow[j] * brow[j];
                                scratch[b.0][p * n + j] += av * gorow[j];
                            }
                            scratch[a.0][i * k + p] += acc;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].values.len();
                        kernel::add_assign(&mut scratch[p.0], &go[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::Tanh(a) => {
                    for i in 0..go.len() {
                        let y = node.values[i];
                        scratch[a.0][i] += go[i] * (S::one() - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    for i in 0..go.len() {
                        let y = node.values[i];
                        scratch[a.0][i] += go[i] * y * (S::one() - y);
                    }
                }
                Op::Log(a) => {
                    for i in 0..go.len() {
                        scratch[a.0][i] += go[i] / self.nodes[a.0].values[i];
                    }
                }
                Op::EmbedRow { table, row } => {
                    let cols = go.len();
                    kernel::add_assign(&mut scratch[table.0][row * cols..(row + 1) * cols], &go);
                }
                Op::Softmax(a) => {
                    // dx_i = y_i * (go_i - sum_j go_j y_j)
                    let y = &node.values;
                    let mut weighted = S::zero();
                    for i in 0..go.len() {
                        weighted += go[i] * y[i];
                    }
                    for i in 0..go.len() {
                        scratch[a.0][i] += y[i] * (go[i] - weighted);
                    }
                }
                Op::CrossEntropy { logits, target } => {
                    let g = go[0];
                    for (i, &p) in node.saved.iter().enumerate() {
                        let indicator = if i == target { S::one() } else { S::zero() };
                        scratch[logits.0][i] += g * (p - indicator);
                    }
                }
                Op::Sum(a) => {
                    let g = go[0];
                    for v in scratch[a.0].iter_mut() {
                        *v += g;
                    }
                }
            }
            scratch[idx] = go;
        }

        for (node, extra) in self.nodes.iter_mut().zip(scratch) {
            if node.grad.is_empty() {
                node.grad = extra;
            } else {
                kernel::add_assign(&mut node.grad, &extra);
            }
        }
        Ok(())
    }

    /// Adds every registered parameter's gradient into `grads`, in
    /// registration order. Parameters ignored by the loss contribute exact
    /// zeros.
    pub fn collect_grads(&self, grads: &mut Gradients<S>) {
        for (name, id) in &self.params {
            let node = &self.nodes[id.0];
            if node.grad.is_empty() {
                grads.add_zeros(name, &node.shape);
            } else {
                grads.add(name, &node.shape, &node.grad);
            }
        }
    }
}

/// Node handles for one LSTM cell's gate parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub w_i: NodeId,
    pub u_i: NodeId,
    pub b_i: NodeId,
    pub w_f: NodeId,
    pub u_f: NodeId,
    pub b_f: NodeId,
    pub w_o: NodeId,
    pub u_o: NodeId,
    pub b_o: NodeId,
    pub w_c: NodeId,
    pub u_c: NodeId,
    pub b_c: NodeId,
}

/// Standard LSTM update with sigmoid gates and tanh candidate.
///
/// `label` names the parameter group in shape errors (e.g. `qgen.lstm`).
pub fn lstm_cell<S: Scalar>(
    tape: &mut Tape<S>,
    x: NodeId,
    h: NodeId,
    c: NodeId,
    p: &LstmNodes,
    label: &str,
) -> Result<(NodeId, NodeId)> {
    let in_dim = match tape.shape(x) {
        [d] => *d,
        s => return Err(Error::Shape(format!("{label}: input must be rank 1, got {s:?}"))),
    };
    let hidden = match tape.shape(h) {
        [d] => *d,
        s => return Err(Error::Shape(format!("{label}: hidden must be rank 1, got {s:?}"))),
    };
    if tape.shape(c) != [hidden] {
        return Err(Error::Shape(format!(
            "{label}: cell state shape {:?} does not match hidden size {hidden}",
            tape.shape(c)
        )));
    }
    let gates = [
        ("w_i", p.w_i, [in_dim, hidden]),
        ("u_i", p.u_i, [hidden, hidden]),
        ("w_f", p.w_f, [in_dim, hidden]),
        ("u_f", p.u_f, [hidden, hidden]),
        ("w_o", p.w_o, [in_dim, hidden]),
        ("u_o", p.u_o, [hidden, hidden]),
        ("w_c", p.w_c, [in_dim, hidden]),
        ("u_c", p.u_c, [hidden, hidden]),
    ];
    for (name, id, want) in gates {
        if tape.shape(id) != want {
            return Err(Error::Shape(format!(
                "{label}.{name} expects {want:?}, got {:?}",
                tape.shape(id)
            )));
        }
    }
    for (name, id) in [("b_i", p.b_i), ("b_f", p.b_f), ("b_o", p.b_o), ("b_c", p.b_c)] {
        if tape.shape(id) != [hidden] {
            return Err(Error::Shape(format!(
                "{label}.{name} expects [{hidden}], got {:?}",
                tape.shape(id)
            )));
        }
    }

    let gate = |tape: &mut Tape<S>, w, u, b| -> Result<NodeId> {
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    };
    let i_pre = gate(tape, p.w_i, p.u_i, p.b_i)?;
    let f_pre = gate(tape, p.w_f, p.u_f, p.b_f)?;
    let o_pre = gate(tape, p.w_o, p.u_o, p.b_o)?;
    let g_pre = gate(tape, p.w_c, p.u_c, p.b_c)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let o = tape.sigmoid(o_pre);
    let g = tape.tanh(g_pre);

    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let c_act = tape.tanh(c_next);
    let h_next = tape.mul(o, c_act)?;
    Ok((h_next, c_next))
}
