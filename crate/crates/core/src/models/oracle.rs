//! The answerer model: encodes a question with an LSTM, concatenates the
//! target object's category embedding and spatial descriptor, and maps the
//! result through a one-hidden-layer MLP to a (yes, no, na) distribution.

use crate::autodiff::tape::{NodeId, Tape};
use crate::autodiff::{kernel, ParamStore};
use crate::error::{Error, Result};
use crate::models::common::{EmbeddingParams, LstmParams, MlpParams};
use crate::scalar::Scalar;
use crate::scenes::vocab::Answer;

pub const PREFIX_EMBED: &str = "oracle.embed";
pub const PREFIX_LSTM: &str = "oracle.lstm";
pub const PREFIX_CAT: &str = "oracle.cat";
pub const PREFIX_MLP: &str = "oracle.mlp";

/// Length of the box location descriptor.
pub const SPATIAL_DIM: usize = 8;

#[derive(Debug, Clone)]
pub struct Oracle<S> {
    pub store: ParamStore<S>,
    embed: EmbeddingParams,
    lstm: LstmParams,
    cat: EmbeddingParams,
    mlp: MlpParams,
}

impl<S: Scalar> Oracle<S> {
    pub fn new(
        vocab_size: usize,
        embed_dim: usize,
        n_categories: usize,
        cat_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Oracle<S>> {
        let mut store = ParamStore::new(seed);
        let embed = EmbeddingParams::new(PREFIX_EMBED, vocab_size, embed_dim);
        let lstm = LstmParams::new(PREFIX_LSTM, embed_dim, hidden_dim);
        let cat = EmbeddingParams::new(PREFIX_CAT, n_categories, cat_dim);
        let mlp = MlpParams::new(PREFIX_MLP, hidden_dim + cat_dim + SPATIAL_DIM, hidden_dim, 3);
        embed.register(&mut store)?;
        lstm.register(&mut store)?;
        cat.register(&mut store)?;
        mlp.register(&mut store)?;
        Ok(Oracle { store, embed, lstm, cat, mlp })
    }

    pub fn from_store(store: ParamStore<S>) -> Result<Oracle<S>> {
        let embed = EmbeddingParams::infer_dims(PREFIX_EMBED, &store)?;
        let lstm = LstmParams::infer_dims(PREFIX_LSTM, &store)?;
        let cat = EmbeddingParams::infer_dims(PREFIX_CAT, &store)?;
        let mlp = MlpParams::infer_dims(PREFIX_MLP, &store)?;
        if lstm.in_dim != embed.dim {
            return Err(Error::Shape(format!(
                "{PREFIX_LSTM} input {} does not match embedding dim {}",
                lstm.in_dim, embed.dim
            )));
        }
        if mlp.in_dim != lstm.hidden + cat.dim + SPATIAL_DIM || mlp.out_dim != 3 {
            return Err(Error::Shape(format!(
                "{PREFIX_MLP} dims [{}, {}] inconsistent with hidden {} + category {} + {SPATIAL_DIM}",
                mlp.in_dim, mlp.out_dim, lstm.hidden, cat.dim
            )));
        }
        Ok(Oracle { store, embed, lstm, cat, mlp })
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows
    }

    pub fn n_categories(&self) -> usize {
        self.cat.rows
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden
    }

    fn check_inputs(&self, question: &[usize], category: usize, spatial: &[S]) -> Result<()> {
        if question.is_empty() {
            return Err(Error::Invalid("oracle needs a non-empty question".into()));
        }
        if category == 0 || category > self.cat.rows {
            return Err(Error::Invalid(format!(
                "category {category} out of range 1..={}",
                self.cat.rows
            )));
        }
        if spatial.len() != SPATIAL_DIM {
            return Err(Error::Shape(format!(
                "spatial descriptor has length {}, expected {SPATIAL_DIM}",
                spatial.len()
            )));
        }
        Ok(())
    }

    /// Raw answer distribution over (yes, no, na).
    pub fn answer_dist(&self, question: &[usize], category: usize, spatial: &[S]) -> Result<Vec<S>> {
        self.check_inputs(question, category, spatial)?;
        let lstm = self.lstm.raw(&self.store)?;
        let (mut h, mut c) = lstm.zero_state();
        for &tok in question {
            let e = self.embed.raw_row(&self.store, tok)?;
            let (h1, c1) = lstm.step(e, &h, &c);
            h = h1;
            c = c1;
        }
        let mut x = Vec::with_capacity(self.mlp.in_dim);
        x.extend_from_slice(&h);
        x.extend_from_slice(self.cat.raw_row(&self.store, category - 1)?);
        x.extend_from_slice(spatial);
        let logits = self.mlp.raw_forward(&self.store, &x)?;
        Ok(kernel::softmax(&logits))
    }

    /// Deterministic answer: argmax with lowest-index tie-break.
    pub fn answer(&self, question: &[usize], category: usize, spatial: &[S]) -> Result<Answer> {
        let dist = self.answer_dist(question, category, spatial)?;
        let mut best = 0usize;
        for i in 1..dist.len() {
            if dist[i] > dist[best] {
                best = i;
            }
        }
        Ok(Answer::from_class_index(best))
    }

    /// Taped cross-entropy of the true answer, for supervised training.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<S>,
        ctx: &OracleTapeCtx,
        question: &[usize],
        category: usize,
        spatial: &[S],
        truth: Answer,
    ) -> Result<NodeId> {
        self.check_inputs(question, category, spatial)?;
        let mut h = tape.leaf_vector(&vec![S::zero(); self.lstm.hidden]);
        let mut c = tape.leaf_vector(&vec![S::zero(); self.lstm.hidden]);
        for &tok in question {
            let e = tape.embed_row(ctx.embed, tok)?;
            let (h1, c1) = self.lstm.tape_step(tape, &ctx.lstm, e, h, c)?;
            h = h1;
            c = c1;
        }
        let cat = tape.embed_row(ctx.cat, category - 1)?;
        let spatial_leaf = tape.leaf_vector(spatial);
        let x = tape.concat(&[h, cat, spatial_leaf])?;
        let logits = self.mlp.tape_forward(tape, &ctx.mlp, x)?;
        tape.cross_entropy(logits, truth.class_index())
    }

    pub fn tape_ctx(&self, tape: &mut Tape<S>) -> Result<OracleTapeCtx> {
        Ok(OracleTapeCtx {
            embed: self.embed.tape_node(tape, &self.store)?,
            lstm: self.lstm.tape_nodes(tape, &self.store)?,
            cat: self.cat.tape_node(tape, &self.store)?,
            mlp: self.mlp.tape_nodes(tape, &self.store)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleTapeCtx {
    pub embed: NodeId,
    pub lstm: crate::autodiff::tape::LstmNodes,
    pub cat: NodeId,
    pub mlp: crate::models::common::MlpNodes,
}
