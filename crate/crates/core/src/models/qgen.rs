//! The question generator: an LSTM language model over the vocabulary,
//! conditioned on scene features by concatenating them to every input
//! embedding. Doubles as the trainable policy during the reinforcement
//! phase.

use crate::autodiff::tape::{NodeId, Tape};
use crate::autodiff::{kernel, ParamStore};
use crate::error::{Error, Result};
use crate::models::common::{EmbeddingParams, LinearParams, LstmParams, LstmRaw};
use crate::scenes::script::Dialogue;
use crate::scenes::vocab::{Answer, START, STOP};
use crate::scalar::Scalar;

pub const PREFIX_EMBED: &str = "qgen.embed";
pub const PREFIX_LSTM: &str = "qgen.lstm";
pub const PREFIX_OUT: &str = "qgen.out";

#[derive(Debug, Clone)]
pub struct QGen<S> {
    pub store: ParamStore<S>,
    embed: EmbeddingParams,
    lstm: LstmParams,
    out: LinearParams,
    feature_dim: usize,
}

impl<S: Scalar> QGen<S> {
    pub fn new(
        vocab_size: usize,
        embed_dim: usize,
        feature_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<QGen<S>> {
        let mut store = ParamStore::new(seed);
        let embed = EmbeddingParams::new(PREFIX_EMBED, vocab_size, embed_dim);
        let lstm = LstmParams::new(PREFIX_LSTM, embed_dim + feature_dim, hidden_dim);
        let out = LinearParams::new(PREFIX_OUT, hidden_dim, vocab_size);
        embed.register(&mut store)?;
        lstm.register(&mut store)?;
        out.register(&mut store)?;
        Ok(QGen { store, embed, lstm, out, feature_dim })
    }

    /// Rebuilds the model around a loaded store, inferring every dimension
    /// from parameter shapes.
    pub fn from_store(store: ParamStore<S>) -> Result<QGen<S>> {
        let embed = EmbeddingParams::infer_dims(PREFIX_EMBED, &store)?;
        let lstm = LstmParams::infer_dims(PREFIX_LSTM, &store)?;
        let out = LinearParams::infer_dims(PREFIX_OUT, &store)?;
        if lstm.in_dim < embed.dim {
            return Err(Error::Shape(format!(
                "{PREFIX_LSTM} input dim {} smaller than embedding dim {}",
                lstm.in_dim, embed.dim
            )));
        }
        if out.out_dim != embed.rows || out.in_dim != lstm.hidden {
            return Err(Error::Shape(format!(
                "{PREFIX_OUT} shape [{}, {}] does not match hidden {} and vocabulary {}",
                out.in_dim, out.out_dim, lstm.hidden, embed.rows
            )));
        }
        let feature_dim = lstm.in_dim - embed.dim;
        Ok(QGen { store, embed, lstm, out, feature_dim })
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden
    }

    /// Borrowed-weight context for rollouts.
    pub fn raw(&self) -> Result<QGenRaw<'_, S>> {
        Ok(QGenRaw {
            model: self,
            lstm: self.lstm.raw(&self.store)?,
            out_w: self.store.get(&format!("{PREFIX_OUT}.w"))?.values(),
            out_b: self.store.get(&format!("{PREFIX_OUT}.b"))?.values(),
        })
    }

    /// Registers all parameters on a tape for a training pass.
    pub fn tape_ctx(&self, tape: &mut Tape<S>) -> Result<QGenTapeCtx> {
        Ok(QGenTapeCtx {
            embed: self.embed.tape_node(tape, &self.store)?,
            lstm: self.lstm.tape_nodes(tape, &self.store)?,
            out: self.out.tape_nodes(tape, &self.store)?,
        })
    }

    /// One taped generator step: embed the previous token, concatenate the
    /// scene features, advance the LSTM, and project to vocabulary logits.
    pub fn tape_step(
        &self,
        tape: &mut Tape<S>,
        ctx: &QGenTapeCtx,
        prev_token: usize,
        features: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let e = tape.embed_row(ctx.embed, prev_token)?;
        let x = tape.concat(&[e, features])?;
        let (h1, c1) = self.lstm.tape_step(tape, &ctx.lstm, x, h, c)?;
        let logits = self.out.tape_forward(tape, ctx.out, h1)?;
        Ok((logits, h1, c1))
    }

    /// Negative log-likelihood of a dialogue's question tokens given the
    /// scene features, on the tape. Answers condition the state but are
    /// never predicted; with `append_stop` the dialogue ends with a
    /// predicted stop token. Returns the loss node and the number of
    /// predicted tokens.
    pub fn nll_on_tape(
        &self,
        tape: &mut Tape<S>,
        ctx: &QGenTapeCtx,
        dialogue: &Dialogue,
        scene_features: &[S],
        append_stop: bool,
    ) -> Result<(NodeId, usize)> {
        let stream = conditioning_stream(dialogue, append_stop);
        if stream.len() < 2 {
            return Err(Error::Invalid("cannot score an empty dialogue".into()));
        }
        if scene_features.len() != self.feature_dim {
            return Err(Error::Shape(format!(
                "scene features have length {}, model expects {}",
                scene_features.len(),
                self.feature_dim
            )));
        }
        let features = tape.leaf_vector(scene_features);
        let mut h = tape.leaf_vector(&vec![S::zero(); self.lstm.hidden]);
        let mut c = tape.leaf_vector(&vec![S::zero(); self.lstm.hidden]);
        let mut terms = Vec::new();
        for t in 0..stream.len() - 1 {
            let (logits, h1, c1) = self.tape_step(tape, ctx, stream[t], features, h, c)?;
            h = h1;
            c = c1;
            let next = stream[t + 1];
            if Answer::from_token(next).is_none() {
                terms.push(tape.cross_entropy(logits, next)?);
            }
        }
        let stacked = tape.concat(&terms)?;
        Ok((tape.sum(stacked), terms.len()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QGenTapeCtx {
    pub embed: NodeId,
    pub lstm: crate::autodiff::tape::LstmNodes,
    pub out: (NodeId, NodeId),
}

/// Rollout-side twin of the taped forward pass; same kernels, same op
/// order, bit-identical outputs.
pub struct QGenRaw<'a, S> {
    model: &'a QGen<S>,
    lstm: LstmRaw<'a, S>,
    out_w: &'a [S],
    out_b: &'a [S],
}

impl<S: Scalar> QGenRaw<'_, S> {
    pub fn zero_state(&self) -> (Vec<S>, Vec<S>) {
        self.lstm.zero_state()
    }

    /// One step to vocabulary logits.
    pub fn step(
        &self,
        prev_token: usize,
        features: &[S],
        h: &[S],
        c: &[S],
    ) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
        let e = self.model.embed.raw_row(&self.model.store, prev_token)?;
        let mut x = Vec::with_capacity(e.len() + features.len());
        x.extend_from_slice(e);
        x.extend_from_slice(features);
        let (h1, c1) = self.lstm.step(&x, h, c);
        let d = self.model.lstm.hidden;
        let v = self.model.embed.rows;
        let mut logits = vec![S::zero(); v];
        kernel::matmul(&h1, self.out_w, 1, d, v, &mut logits);
        kernel::add_assign(&mut logits, self.out_b);
        Ok((logits, h1, c1))
    }

    /// One step to a probability distribution over the whole vocabulary.
    pub fn step_dist(
        &self,
        prev_token: usize,
        features: &[S],
        h: &[S],
        c: &[S],
    ) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
        let (logits, h1, c1) = self.step(prev_token, features, h, c)?;
        Ok((kernel::softmax(&logits), h1, c1))
    }
}

/// Flattens a dialogue into the token stream the generator consumes: the
/// start sentinel, then each question's tokens followed by its answer
/// token, then optionally the stop token.
pub fn conditioning_stream(dialogue: &Dialogue, append_stop: bool) -> Vec<usize> {
    let mut stream = vec![START];
    for pair in &dialogue.pairs {
        stream.extend_from_slice(&pair.question);
        stream.push(pair.answer.token());
    }
    if append_stop {
        stream.push(STOP);
    }
    stream
}
