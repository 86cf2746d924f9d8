//! The guesser model: encodes the finished dialogue with an LSTM, embeds
//! every candidate object through a shared MLP, and scores objects by dot
//! product with the dialogue encoding. Sharing the MLP across objects
//! handles any object count with one parameter set.

use crate::autodiff::tape::{NodeId, Tape};
use crate::autodiff::{kernel, ParamStore};
use crate::error::{Error, Result};
use crate::models::common::{EmbeddingParams, LstmParams, MlpParams};
use crate::models::oracle::SPATIAL_DIM;
use crate::scalar::Scalar;
use crate::scenes::scene::{spatial_features, Game};
use crate::scenes::script::Dialogue;

pub const PREFIX_EMBED: &str = "guesser.embed";
pub const PREFIX_LSTM: &str = "guesser.lstm";
pub const PREFIX_CAT: &str = "guesser.cat";
pub const PREFIX_OBJ: &str = "guesser.obj";

/// One candidate object as the guesser sees it.
#[derive(Debug, Clone)]
pub struct GuesserObject<S> {
    /// 1-based category id.
    pub category: usize,
    pub spatial: Vec<S>,
}

impl<S: Scalar> GuesserObject<S> {
    /// All of a game's objects in listed order.
    pub fn from_game(game: &Game<S>) -> Result<Vec<GuesserObject<S>>> {
        game.objects
            .iter()
            .map(|o| {
                Ok(GuesserObject {
                    category: o.category,
                    spatial: spatial_features::<S>(o.bbox, game.width, game.height)?.to_vec(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Guesser<S> {
    pub store: ParamStore<S>,
    embed: EmbeddingParams,
    lstm: LstmParams,
    cat: EmbeddingParams,
    obj: MlpParams,
}

impl<S: Scalar> Guesser<S> {
    pub fn new(
        vocab_size: usize,
        embed_dim: usize,
        n_categories: usize,
        cat_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Guesser<S>> {
        let mut store = ParamStore::new(seed);
        let embed = EmbeddingParams::new(PREFIX_EMBED, vocab_size, embed_dim);
        let lstm = LstmParams::new(PREFIX_LSTM, embed_dim, hidden_dim);
        let cat = EmbeddingParams::new(PREFIX_CAT, n_categories, cat_dim);
        // Object embeddings must land in the dialogue encoding space for the
        // dot product to type-check.
        let obj = MlpParams::new(PREFIX_OBJ, cat_dim + SPATIAL_DIM, hidden_dim, hidden_dim);
        embed.register(&mut store)?;
        lstm.register(&mut store)?;
        cat.register(&mut store)?;
        obj.register(&mut store)?;
        Ok(Guesser { store, embed, lstm, cat, obj })
    }

    pub fn from_store(store: ParamStore<S>) -> Result<Guesser<S>> {
        let embed = EmbeddingParams::infer_dims(PREFIX_EMBED, &store)?;
        let lstm = LstmParams::infer_dims(PREFIX_LSTM, &store)?;
        let cat = EmbeddingParams::infer_dims(PREFIX_CAT, &store)?;
        let obj = MlpParams::infer_dims(PREFIX_OBJ, &store)?;
        if lstm.in_dim != embed.dim {
            return Err(Error::Shape(format!(
                "{PREFIX_LSTM} input {} does not match embedding dim {}",
                lstm.in_dim, embed.dim
            )));
        }
        if obj.out_dim != lstm.hidden || obj.in_dim != cat.dim + SPATIAL_DIM {
            return Err(Error::Shape(format!(
                "{PREFIX_OBJ} dims [{}, {}] inconsistent with category {} and hidden {}",
                obj.in_dim, obj.out_dim, cat.dim, lstm.hidden
            )));
        }
        Ok(Guesser { store, embed, lstm, cat, obj })
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

    fn check_objects(&self, objects: &[GuesserObject<S>]) -> Result<()> {
        if objects.is_empty() {
            return Err(Error::Invalid("guesser needs at least one object".into()));
        }
        for (i, o) in objects.iter().enumerate() {
            if o.category == 0 || o.category > self.cat.rows {
                return Err(Error::Invalid(format!(
                    "object {i} category {} out of range 1..={}",
                    o.category, self.cat.rows
                )));
            }
            if o.spatial.len() != SPATIAL_DIM {
                return Err(Error::Shape(format!(
                    "object {i} spatial descriptor has length {}, expected {SPATIAL_DIM}",
                    o.spatial.len()
                )));
            }
        }
        Ok(())
    }

    fn dialogue_encoding(&self, tokens: &[usize]) -> Result<Vec<S>> {
        let lstm = self.lstm.raw(&self.store)?;
        let (mut h, mut c) = lstm.zero_state();
        for &tok in tokens {
            let e = self.embed.raw_row(&self.store, tok)?;
            let (h1, c1) = lstm.step(e, &h, &c);
            h = h1;
            c = c1;
        }
        Ok(h)
    }

    fn object_embedding_input(&self, o: &GuesserObject<S>) -> Result<Vec<S>> {
        let mut x = Vec::with_capacity(self.obj.in_dim);
        x.extend_from_slice(self.cat.raw_row(&self.store, o.category - 1)?);
        x.extend_from_slice(&o.spatial);
        Ok(x)
    }

    /// Raw per-object scores (pre-softmax).
    pub fn scores(&self, tokens: &[usize], objects: &[GuesserObject<S>]) -> Result<Vec<S>> {
        self.check_objects(objects)?;
        let h = self.dialogue_encoding(tokens)?;
        objects
            .iter()
            .map(|o| {
                let e = self.obj.raw_forward(&self.store, &self.object_embedding_input(o)?)?;
                let mut acc = S::zero();
                for (a, b) in h.iter().zip(&e) {
                    acc += *a * *b;
                }
                Ok(acc)
            })
            .collect()
    }

    /// Probability distribution over the candidate objects.
    pub fn guess_dist(&self, tokens: &[usize], objects: &[GuesserObject<S>]) -> Result<Vec<S>> {
        Ok(kernel::softmax(&self.scores(tokens, objects)?))
    }

    /// Argmax guess with lowest-index tie-break.
    pub fn guess(&self, tokens: &[usize], objects: &[GuesserObject<S>]) -> Result<usize> {
        let scores = self.scores(tokens, objects)?;
        let mut best = 0usize;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Taped cross-entropy of the true target, for supervised training.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<S>,
        ctx: &GuesserTapeCtx,
        tokens: &[usize],
        objects: &[GuesserObject<S>],
        target_index: usize,
    ) -> Result<NodeId> {
        self.check_objects(objects)?;
        if target_index >= objects.len() {
            return Err(Error::Invalid(format!(
                "target index {target_index} out of range for {} objects",
                objects.len()
            )));
        }
        let mut h = tape.leaf_vector(&vec![S::zero(); self.lstm.hidden]);
        let mut c = tape.leaf_vector(&vec![S::zero(); self.lstm.hidden]);
        for &tok in tokens {
            let e = tape.embed_row(ctx.embed, tok)?;
            let (h1, c1) = self.lstm.tape_step(tape, &ctx.lstm, e, h, c)?;
            h = h1;
            c = c1;
        }
        let mut scores = Vec::with_capacity(objects.len());
        for o in objects {
            let cat = tape.embed_row(ctx.cat, o.category - 1)?;
            let sp = tape.leaf_vector(&o.spatial);
            let x = tape.concat(&[cat, sp])?;
            let e = self.obj.tape_forward(tape, &ctx.obj, x)?;
            scores.push(tape.dot(h, e)?);
        }
        let logits = tape.concat(&scores)?;
        tape.cross_entropy(logits, target_index)
    }

    pub fn tape_ctx(&self, tape: &mut Tape<S>) -> Result<GuesserTapeCtx> {
        Ok(GuesserTapeCtx {
            embed: self.embed.tape_node(tape, &self.store)?,
            lstm: self.lstm.tape_nodes(tape, &self.store)?,
            cat: self.cat.tape_node(tape, &self.store)?,
            obj: self.obj.tape_nodes(tape, &self.store)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GuesserTapeCtx {
    pub embed: NodeId,
    pub lstm: crate::autodiff::tape::LstmNodes,
    pub cat: NodeId,
    pub obj: crate::models::common::MlpNodes,
}

/// The flat token stream the guesser consumes: each question's tokens
/// followed by its answer token. No start or stop sentinels.
pub fn guesser_stream(dialogue: &Dialogue) -> Vec<usize> {
    let mut out = Vec::with_capacity(dialogue.question_tokens() + dialogue.pairs.len());
    for pair in &dialogue.pairs {
        out.extend_from_slice(&pair.question);
        out.push(pair.answer.token());
    }
    out
}
