//! The three neural models: question generator (the trainable policy),
//! answer oracle, and object guesser, each owning its parameter store so
//! checkpoints stay per-model files.

pub mod common;
pub mod guesser;
pub mod oracle;
pub mod qgen;

pub use common::{zero_all, EmbeddingParams, LinearParams, LstmParams, MlpParams};
pub use guesser::{guesser_stream, Guesser, GuesserObject};
pub use oracle::{Oracle, SPATIAL_DIM};
pub use qgen::{conditioning_stream, QGen, QGenRaw, QGenTapeCtx};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shared architecture sizes for all models built against one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Token embedding width.
    pub embed_dim: usize,
    /// Category embedding width (oracle and guesser).
    pub cat_dim: usize,
    /// Recurrent state width.
    pub hidden_dim: usize,
    /// Scene feature vector length the generator conditions on.
    pub feature_dim: usize,
    /// Hidden width of the reward-baseline MLP.
    pub baseline_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            embed_dim: 16,
            cat_dim: 8,
            hidden_dim: 64,
            feature_dim: 32,
            baseline_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("model.embed_dim", self.embed_dim),
            ("model.cat_dim", self.cat_dim),
            ("model.hidden_dim", self.hidden_dim),
            ("model.feature_dim", self.feature_dim),
            ("model.baseline_hidden", self.baseline_hidden),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn build_qgen<S: Scalar>(&self, vocab_size: usize, seed: u64) -> Result<QGen<S>> {
        QGen::new(vocab_size, self.embed_dim, self.feature_dim, self.hidden_dim, seed)
    }

    pub fn build_oracle<S: Scalar>(
        &self,
        vocab_size: usize,
        n_categories: usize,
        seed: u64,
    ) -> Result<Oracle<S>> {
        Oracle::new(vocab_size, self.embed_dim, n_categories, self.cat_dim, self.hidden_dim, seed)
    }

    pub fn build_guesser<S: Scalar>(
        &self,
        vocab_size: usize,
        n_categories: usize,
        seed: u64,
    ) -> Result<Guesser<S>> {
        Guesser::new(vocab_size, self.embed_dim, n_categories, self.cat_dim, self.hidden_dim, seed)
    }

    pub fn build_baseline<S: Scalar>(&self, seed: u64) -> Result<crate::reinforce::Baseline<S>> {
        crate::reinforce::Baseline::new(self.hidden_dim, self.baseline_hidden, seed)
    }
}
