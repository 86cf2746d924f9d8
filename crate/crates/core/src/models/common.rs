//! Parameter-group helpers shared by the three models.
//!
//! Each group (LSTM cell, two-layer MLP, embedding table) knows its
//! parameter names, registers itself in a store, and offers two forward
//! paths over the same kernels and the same operation order: one recording
//! onto a tape for training, one raw for rollouts. Keeping the op order
//! identical makes the two paths bit-identical, which the trajectory-replay
//! tests rely on.

use crate::autodiff::kernel;
use crate::autodiff::tape::{lstm_cell, LstmNodes, NodeId, Tape};
use crate::autodiff::tensor::Tensor;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gate parameter names for one LSTM cell under a prefix.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
}

const GATES: [char; 4] = ['i', 'f', 'o', 'c'];

impl LstmParams {
    pub fn new(prefix: &str, in_dim: usize, hidden: usize) -> LstmParams {
        LstmParams { prefix: prefix.to_string(), in_dim, hidden }
    }

    fn name(&self, kind: char, gate: char) -> String {
        format!("{}.{kind}_{gate}", self.prefix)
    }

    pub fn register<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        for g in GATES {
            store.register(&self.name('w', g), vec![self.in_dim, self.hidden])?;
            store.register(&self.name('u', g), vec![self.hidden, self.hidden])?;
            store.register(&self.name('b', g), vec![self.hidden])?;
        }
        Ok(())
    }

    /// Re-derives the dimensions from a loaded store.
    pub fn infer_dims<S: Scalar>(prefix: &str, store: &ParamStore<S>) -> Result<LstmParams> {
        let w = store.get(&format!("{prefix}.w_i"))?;
        match w.shape() {
            [in_dim, hidden] => Ok(LstmParams::new(prefix, *in_dim, *hidden)),
            s => Err(Error::Shape(format!("{prefix}.w_i must be rank 2, got {s:?}"))),
        }
    }

    pub fn tape_nodes<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>) -> Result<LstmNodes> {
        Ok(LstmNodes {
            w_i: tape.param(store, &self.name('w', 'i'))?,
            u_i: tape.param(store, &self.name('u', 'i'))?,
            b_i: tape.param(store, &self.name('b', 'i'))?,
            w_f: tape.param(store, &self.name('w', 'f'))?,
            u_f: tape.param(store, &self.name('u', 'f'))?,
            b_f: tape.param(store, &self.name('b', 'f'))?,
            w_o: tape.param(store, &self.name('w', 'o'))?,
            u_o: tape.param(store, &self.name('u', 'o'))?,
            b_o: tape.param(store, &self.name('b', 'o'))?,
            w_c: tape.param(store, &self.name('w', 'c'))?,
            u_c: tape.param(store, &self.name('u', 'c'))?,
            b_c: tape.param(store, &self.name('b', 'c'))?,
        })
    }

    /// One taped step; see [`LstmRaw::step`] for the raw twin.
    pub fn tape_step<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        nodes: &LstmNodes,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        lstm_cell(tape, x, h, c, nodes, &self.prefix)
    }

    pub fn raw<'a, S: Scalar>(&self, store: &'a ParamStore<S>) -> Result<LstmRaw<'a, S>> {
        let get = |kind: char, gate: char| -> Result<&'a [S]> {
            Ok(store.get(&self.name(kind, gate))?.values())
        };
        Ok(LstmRaw {
            in_dim: self.in_dim,
            hidden: self.hidden,
            w: [get('w', 'i')?, get('w', 'f')?, get('w', 'o')?, get('w', 'c')?],
            u: [get('u', 'i')?, get('u', 'f')?, get('u', 'o')?, get('u', 'c')?],
            b: [get('b', 'i')?, get('b', 'f')?, get('b', 'o')?, get('b', 'c')?],
        })
    }
}

/// Borrowed LSTM weights for allocation-light rollout steps.
pub struct LstmRaw<'a, S> {
    in_dim: usize,
    hidden: usize,
    /// Gate order i, f, o, c.
    w: [&'a [S]; 4],
    u: [&'a [S]; 4],
    b: [&'a [S]; 4],
}

impl<S: Scalar> LstmRaw<'_, S> {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn zero_state(&self) -> (Vec<S>, Vec<S>) {
        (vec![S::zero(); self.hidden], vec![S::zero(); self.hidden])
    }

    /// Mirrors the taped op sequence exactly: per gate `(x·W + h·U) + b`,
    /// then `c' = f∘c + i∘g`, `h' = o∘tanh(c')`.
    pub fn step(&self, x: &[S], h: &[S], c: &[S]) -> (Vec<S>, Vec<S>) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(h.len(), self.hidden);
        let d = self.hidden;
        let mut gates = [vec![S::zero(); d], vec![S::zero(); d], vec![S::zero(); d], vec![S::zero(); d]];
        for g in 0..4 {
            let mut xw = vec![S::zero(); d];
            kernel::matmul(x, self.w[g], 1, self.in_dim, d, &mut xw);
            let mut hu = vec![S::zero(); d];
            kernel::matmul(h, self.u[g], 1, d, d, &mut hu);
            for j in 0..d {
                gates[g][j] = (xw[j] + hu[j]) + self.b[g][j];
            }
        }
        let [i_pre, f_pre, o_pre, g_pre] = gates;
        let mut c_next = vec![S::zero(); d];
        let mut h_next = vec![S::zero(); d];
        for j in 0..d {
            let i = kernel::sigmoid(i_pre[j]);
            let f = kernel::sigmoid(f_pre[j]);
            let o = kernel::sigmoid(o_pre[j]);
            let g = g_pre[j].tanh();
            c_next[j] = (f * c[j]) + (i * g);
            h_next[j] = o * c_next[j].tanh();
        }
        (h_next, c_next)
    }
}

/// Names for a one-hidden-layer MLP `in -> hidden -(tanh)-> out`.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl MlpParams {
    pub fn new(prefix: &str, in_dim: usize, hidden: usize, out_dim: usize) -> MlpParams {
        MlpParams { prefix: prefix.to_string(), in_dim, hidden, out_dim }
    }

    pub fn register<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        store.register(&format!("{}.w1", self.prefix), vec![self.in_dim, self.hidden])?;
        store.register(&format!("{}.b1", self.prefix), vec![self.hidden])?;
        store.register(&format!("{}.w2", self.prefix), vec![self.hidden, self.out_dim])?;
        store.register(&format!("{}.b2", self.prefix), vec![self.out_dim])?;
        Ok(())
    }

    pub fn infer_dims<S: Scalar>(prefix: &str, store: &ParamStore<S>) -> Result<MlpParams> {
        let w1 = store.get(&format!("{prefix}.w1"))?;
        let w2 = store.get(&format!("{prefix}.w2"))?;
        match (w1.shape(), w2.shape()) {
            ([in_dim, hidden], [h2, out_dim]) if hidden == h2 => {
                Ok(MlpParams::new(prefix, *in_dim, *hidden, *out_dim))
            }
            _ => Err(Error::Shape(format!(
                "{prefix}: w1 {:?} and w2 {:?} do not chain",
                w1.shape(),
                w2.shape()
            ))),
        }
    }

    pub fn tape_nodes<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>) -> Result<MlpNodes> {
        Ok(MlpNodes {
            w1: tape.param(store, &format!("{}.w1", self.prefix))?,
            b1: tape.param(store, &format!("{}.b1", self.prefix))?,
            w2: tape.param(store, &format!("{}.w2", self.prefix))?,
            b2: tape.param(store, &format!("{}.b2", self.prefix))?,
        })
    }

    /// `tanh(x·W1 + b1)·W2 + b2`, recorded on the tape.
    pub fn tape_forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        nodes: &MlpNodes,
        x: NodeId,
    ) -> Result<NodeId> {
        let xw = tape.matmul(x, nodes.w1)?;
        let pre = tape.add(xw, nodes.b1)?;
        let hid = tape.tanh(pre);
        let hw = tape.matmul(hid, nodes.w2)?;
        tape.add(hw, nodes.b2)
    }

    /// Raw twin of [`MlpParams::tape_forward`].
    pub fn raw_forward<S: Scalar>(&self, store: &ParamStore<S>, x: &[S]) -> Result<Vec<S>> {
        let w1 = store.get(&format!("{}.w1", self.prefix))?.values();
        let b1 = store.get(&format!("{}.b1", self.prefix))?.values();
        let w2 = store.get(&format!("{}.w2", self.prefix))?.values();
        let b2 = store.get(&format!("{}.b2", self.prefix))?.values();
        let mut hid = vec![S::zero(); self.hidden];
        kernel::matmul(x, w1, 1, self.in_dim, self.hidden, &mut hid);
        kernel::add_assign(&mut hid, b1);
        kernel::tanh_inplace(&mut hid);
        let mut out = vec![S::zero(); self.out_dim];
        kernel::matmul(&hid, w2, 1, self.hidden, self.out_dim, &mut out);
        kernel::add_assign(&mut out, b2);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MlpNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

/// An embedding table `rows × dim` under a single parameter name.
#[derive(Debug, Clone)]
pub struct EmbeddingParams {
    pub name: String,
    pub rows: usize,
    pub dim: usize,
}

impl EmbeddingParams {
    pub fn new(name: &str, rows: usize, dim: usize) -> EmbeddingParams {
        EmbeddingParams { name: name.to_string(), rows, dim }
    }

    pub fn register<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        store.register(&self.name, vec![self.rows, self.dim])
    }

    pub fn infer_dims<S: Scalar>(name: &str, store: &ParamStore<S>) -> Result<EmbeddingParams> {
        let t = store.get(name)?;
        match t.shape() {
            [rows, dim] => Ok(EmbeddingParams::new(name, *rows, *dim)),
            s => Err(Error::Shape(format!("{name} must be rank 2, got {s:?}"))),
        }
    }

    pub fn tape_node<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>) -> Result<NodeId> {
        tape.param(store, &self.name)
    }

    pub fn raw_row<'a, S: Scalar>(&self, store: &'a ParamStore<S>, row: usize) -> Result<&'a [S]> {
        let t = store.get(&self.name)?;
        if row >= self.rows {
            return Err(Error::UnknownToken { token: row, vocab_size: self.rows });
        }
        Ok(&t.values()[row * self.dim..(row + 1) * self.dim])
    }
}

/// Tensor of a bias-free linear readout `in × out` plus its bias, used for
/// the generator's output projection.
#[derive(Debug, Clone)]
pub struct LinearParams {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearParams {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> LinearParams {
        LinearParams { prefix: prefix.to_string(), in_dim, out_dim }
    }

    pub fn register<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        store.register(&format!("{}.w", self.prefix), vec![self.in_dim, self.out_dim])?;
        store.register(&format!("{}.b", self.prefix), vec![self.out_dim])
    }

    pub fn infer_dims<S: Scalar>(prefix: &str, store: &ParamStore<S>) -> Result<LinearParams> {
        let w = store.get(&format!("{prefix}.w"))?;
        match w.shape() {
            [in_dim, out_dim] => Ok(LinearParams::new(prefix, *in_dim, *out_dim)),
            s => Err(Error::Shape(format!("{prefix}.w must be rank 2, got {s:?}"))),
        }
    }

    pub fn tape_nodes<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>) -> Result<(NodeId, NodeId)> {
        Ok((
            tape.param(store, &format!("{}.w", self.prefix))?,
            tape.param(store, &format!("{}.b", self.prefix))?,
        ))
    }

    pub fn tape_forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        nodes: (NodeId, NodeId),
        x: NodeId,
    ) -> Result<NodeId> {
        let xw = tape.matmul(x, nodes.0)?;
        tape.add(xw, nodes.1)
    }

    pub fn raw_forward<S: Scalar>(&self, store: &ParamStore<S>, x: &[S]) -> Result<Vec<S>> {
        let w = store.get(&format!("{}.w", self.prefix))?.values();
        let b = store.get(&format!("{}.b", self.prefix))?.values();
        let mut out = vec![S::zero(); self.out_dim];
        kernel::matmul(x, w, 1, self.in_dim, self.out_dim, &mut out);
        kernel::add_assign(&mut out, b);
        Ok(out)
    }
}

/// Zeroes every parameter in the store (tests use this to force uniform
/// softmax outputs).
pub fn zero_all<S: Scalar>(store: &mut ParamStore<S>) {
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    for name in names {
        let shape = store.get(&name).expect("name just listed").shape().to_vec();
        store.insert(&name, Tensor::zeros(shape));
    }
}
