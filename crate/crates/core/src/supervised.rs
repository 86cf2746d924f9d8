//! Cross-entropy pretraining of the three models on the scripted corpus:
//! the oracle learns to answer questions, the guesser learns to pick the
//! target from successful dialogues, and the question generator learns
//! the conditional token distribution of the dialogues themselves.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::params::{derive_seed, Gradients, ParamStore};
use crate::autodiff::tape::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::models::guesser::{guesser_stream, Guesser, GuesserObject};
use crate::models::oracle::Oracle;
use crate::models::qgen::QGen;
use crate::models::ModelConfig;
use crate::scalar::Scalar;
use crate::scenes::corpus::{CorpusData, CorpusGame};
use crate::scenes::scene::spatial_features;
use crate::scenes::script::Dialogue;
use crate::scenes::vocab::Answer;

/// Supervised-phase hyperparameters (not taken from any published
/// setting; see the config defaults).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Halve the learning rate (and roll the epoch back) whenever the
    /// full-corpus training loss would otherwise increase.
    pub plateau_halving: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig { lr: 0.2, batch: 32, epochs: 15, plateau_halving: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr >= 0.0) {
            problems.push(format!("lr must be >= 0, got {}", self.lr));
        }
        if self.batch == 0 {
            problems.push("batch must be positive".into());
        }
        if self.epochs == 0 {
            problems.push("epochs must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// One metrics row, serialized as a JSONL line. Classifier trainers fill
/// `error_rate`; the generator trainer fills `perplexity`.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
}

impl EpochRow {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    fn new(epoch: usize, split: &str, loss: f64, error_rate: Option<f64>) -> EpochRow {
        EpochRow {
            epoch,
            split: split.to_string(),
            loss,
            error_rate,
            // A trainer without a notion of error reports perplexity.
            perplexity: if error_rate.is_none() { Some(loss.exp()) } else { None },
        }
    }
}

/// One supervised objective: how to score an example on the tape and how
/// to evaluate a split without one.
trait Task<S: Scalar> {
    type Model;
    type Example;

    fn store_mut(model: &mut Self::Model) -> &mut ParamStore<S>;
    /// Taped loss for one example: the summed cross-entropy node and the
    /// denominator this example contributes to the batch mean.
    fn example_loss(
        model: &Self::Model,
        tape: &mut Tape<S>,
        ex: &Self::Example,
    ) -> Result<(NodeId, f64)>;
    /// Pooled mean loss and, for classifiers, the error rate.
    fn evaluate(model: &Self::Model, examples: &[Self::Example]) -> Result<(f64, Option<f64>)>;
}

/// Shared SGD loop: shuffled batches, per-example gradient accumulation
/// normalized by the pooled denominator, optional rollback-and-halve on a
/// training-loss increase (which makes the reported training loss
/// non-increasing), and best-validation model selection.
fn run<S: Scalar, T: Task<S>>(
    model: &mut T::Model,
    train: &[T::Example],
    valid: &[T::Example],
    test: &[T::Example],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochRow>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut rows = Vec::new();
    let mut lr = cfg.lr;
    let (mut prev_loss, mut prev_err) = T::evaluate(model, train)?;
    let mut best: Option<(f64, usize, ParamStore<S>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let snapshot = T::store_mut(model).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10_000 + epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch) {
            let mut grads = Gradients::new();
            let mut denom = 0.0;
            for &i in batch {
                let mut tape = Tape::new();
                let (loss, d) = T::example_loss(model, &mut tape, &train[i])?;
                tape.backward(loss)?;
                tape.collect_grads(&mut grads);
                denom += d;
            }
            grads.scale(S::of(1.0 / denom));
            T::store_mut(model).sgd_step(&grads, S::of(lr))?;
        }

        let (mut train_loss, mut train_err) = T::evaluate(model, train)?;
        if cfg.plateau_halving && train_loss > prev_loss {
            *T::store_mut(model) = snapshot;
            lr /= 2.0;
            train_loss = prev_loss;
            train_err = prev_err;
        } else {
            prev_loss = train_loss;
            prev_err = train_err;
        }
        rows.push(EpochRow::new(epoch, "train", train_loss, train_err));

        let monitored = if valid.is_empty() {
            (train_loss, train_err)
        } else {
            let (vl, ve) = T::evaluate(model, valid)?;
            rows.push(EpochRow::new(epoch, "valid", vl, ve));
            (vl, ve)
        };
        let metric = monitored.1.unwrap_or(monitored.0);
        if best.as_ref().map_or(true, |(m, _, _)| metric < *m) {
            best = Some((metric, epoch, T::store_mut(model).clone()));
        }
    }

    let (_, best_epoch, best_store) = best.expect("at least one epoch ran");
    *T::store_mut(model) = best_store;
    if !test.is_empty() {
        let (tl, te) = T::evaluate(model, test)?;
        rows.push(EpochRow::new(best_epoch, "test", tl, te));
    }
    Ok(rows)
}

/// One question with the target's identity and the scripted answer.
#[derive(Debug, Clone)]
pub struct OracleExample<S> {
    pub question: Vec<usize>,
    pub category: usize,
    pub spatial: Vec<S>,
    pub truth: Answer,
}

pub fn oracle_examples<S: Scalar>(games: &[CorpusGame<S>]) -> Result<Vec<OracleExample<S>>> {
    let mut out = Vec::new();
    for g in games {
        let target = g.game.target();
        let spatial = spatial_features::<S>(target.bbox, g.game.width, g.game.height)?.to_vec();
        for pair in &g.dialogue.pairs {
            out.push(OracleExample {
                question: pair.question.clone(),
                category: target.category,
                spatial: spatial.clone(),
                truth: pair.answer,
            });
        }
    }
    Ok(out)
}

struct OracleTask;

impl<S: Scalar> Task<S> for OracleTask {
    type Model = Oracle<S>;
    type Example = OracleExample<S>;

    fn store_mut(model: &mut Oracle<S>) -> &mut ParamStore<S> {
        &mut model.store
    }

    fn example_loss(
        model: &Oracle<S>,
        tape: &mut Tape<S>,
        ex: &OracleExample<S>,
    ) -> Result<(NodeId, f64)> {
        let ctx = model.tape_ctx(tape)?;
        let loss = model.loss_on_tape(tape, &ctx, &ex.question, ex.category, &ex.spatial, ex.truth)?;
        Ok((loss, 1.0))
    }

    fn evaluate(model: &Oracle<S>, examples: &[OracleExample<S>]) -> Result<(f64, Option<f64>)> {
        let mut loss = 0.0;
        let mut errors = 0usize;
        for ex in examples {
            let dist = model.answer_dist(&ex.question, ex.category, &ex.spatial)?;
            loss -= dist[ex.truth.class_index()].to_f64_lossy().ln();
            if model.answer(&ex.question, ex.category, &ex.spatial)? != ex.truth {
                errors += 1;
            }
        }
        let n = examples.len().max(1) as f64;
        Ok((loss / n, Some(errors as f64 / n)))
    }
}

/// Trains the answering model on every question of the corpus; keeps the
/// epoch with the best validation error.
pub fn train_oracle<S: Scalar>(
    corpus: &CorpusData<S>,
    dims: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Oracle<S>, Vec<EpochRow>)> {
    dims.validate()?;
    let mut model = dims.build_oracle(corpus.vocab.len(), corpus.vocab.n_categories(), seed)?;
    let train = oracle_examples(&corpus.train)?;
    let valid = oracle_examples(&corpus.valid)?;
    let test = oracle_examples(&corpus.test)?;
    let rows = run::<S, OracleTask>(&mut model, &train, &valid, &test, cfg, seed)?;
    Ok((model, rows))
}

/// One finished dialogue with the scene's objects and the target index.
#[derive(Debug, Clone)]
pub struct GuesserExample<S> {
    pub tokens: Vec<usize>,
    pub objects: Vec<GuesserObject<S>>,
    pub target: usize,
}

/// Extracts examples from the dialogues whose scripted guess was correct;
/// failed games would teach the guesser the wrong mapping.
pub fn guesser_examples<S: Scalar>(games: &[CorpusGame<S>]) -> Result<Vec<GuesserExample<S>>> {
    let mut out = Vec::new();
    for g in games {
        if !g.success {
            continue;
        }
        out.push(GuesserExample {
            tokens: guesser_stream(&g.dialogue),
            objects: GuesserObject::from_game(&g.game)?,
            target: g.game.target_index,
        });
    }
    Ok(out)
}

struct GuesserTask;

impl<S: Scalar> Task<S> for GuesserTask {
    type Model = Guesser<S>;
    type Example = GuesserExample<S>;

    fn store_mut(model: &mut Guesser<S>) -> &mut ParamStore<S> {
        &mut model.store
    }

    fn example_loss(
        model: &Guesser<S>,
        tape: &mut Tape<S>,
        ex: &GuesserExample<S>,
    ) -> Result<(NodeId, f64)> {
        let ctx = model.tape_ctx(tape)?;
        let loss = model.loss_on_tape(tape, &ctx, &ex.tokens, &ex.objects, ex.target)?;
        Ok((loss, 1.0))
    }

    fn evaluate(model: &Guesser<S>, examples: &[GuesserExample<S>]) -> Result<(f64, Option<f64>)> {
        let mut loss = 0.0;
        let mut errors = 0usize;
        for ex in examples {
            let dist = model.guess_dist(&ex.tokens, &ex.objects)?;
            loss -= dist[ex.target].to_f64_lossy().ln();
            if model.guess(&ex.tokens, &ex.objects)? != ex.target {
                errors += 1;
            }
        }
        let n = examples.len().max(1) as f64;
        Ok((loss / n, Some(errors as f64 / n)))
    }
}

/// Trains the guessing model on successful dialogues; keeps the epoch
/// with the best validation error.
pub fn train_guesser<S: Scalar>(
    corpus: &CorpusData<S>,
    dims: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Guesser<S>, Vec<EpochRow>)> {
    dims.validate()?;
    let mut model = dims.build_guesser(corpus.vocab.len(), corpus.vocab.n_categories(), seed)?;
    let train = guesser_examples(&corpus.train)?;
    if train.is_empty() {
        return Err(Error::Invalid("no successful dialogues to train the guesser on".into()));
    }
    let valid = guesser_examples(&corpus.valid)?;
    let test = guesser_examples(&corpus.test)?;
    let rows = run::<S, GuesserTask>(&mut model, &train, &valid, &test, cfg, seed)?;
    Ok((model, rows))
}

/// One dialogue for likelihood training, with its conditioning features.
#[derive(Debug, Clone)]
pub struct QgenExample<S> {
    pub dialogue: Dialogue,
    pub features: Vec<S>,
    /// Dialogues that pinned down the target get stop-token supervision.
    pub append_stop: bool,
}

pub fn qgen_examples<S: Scalar>(games: &[CorpusGame<S>]) -> Vec<QgenExample<S>> {
    games
        .iter()
        .map(|g| QgenExample {
            dialogue: g.dialogue.clone(),
            features: g.game.scene_features.clone(),
            append_stop: g.solved,
        })
        .collect()
}

struct QgenTask;

impl<S: Scalar> Task<S> for QgenTask {
    type Model = QGen<S>;
    type Example = QgenExample<S>;

    fn store_mut(model: &mut QGen<S>) -> &mut ParamStore<S> {
        &mut model.store
    }

    fn example_loss(
        model: &QGen<S>,
        tape: &mut Tape<S>,
        ex: &QgenExample<S>,
    ) -> Result<(NodeId, f64)> {
        let ctx = model.tape_ctx(tape)?;
        let (loss, count) =
            model.nll_on_tape(tape, &ctx, &ex.dialogue, &ex.features, ex.append_stop)?;
        Ok((loss, count as f64))
    }

    fn evaluate(model: &QGen<S>, examples: &[QgenExample<S>]) -> Result<(f64, Option<f64>)> {
        let mut total = 0.0;
        let mut tokens = 0.0;
        for ex in examples {
            let mut tape = Tape::new();
            let (loss, count) = Self::example_loss(model, &mut tape, ex)?;
            total += tape.values(loss)[0].to_f64_lossy();
            tokens += count;
        }
        Ok((total / tokens.max(1.0), None))
    }
}

/// Likelihood-trains the question generator on the whole corpus (reported
/// loss is mean negative log-likelihood per predicted token; perplexity
/// is its exponential). Keeps the epoch with the best validation loss.
pub fn pretrain_qgen<S: Scalar>(
    corpus: &CorpusData<S>,
    dims: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(QGen<S>, Vec<EpochRow>)> {
    dims.validate()?;
    let mut model = dims.build_qgen(corpus.vocab.len(), seed)?;
    let train = qgen_examples(&corpus.train);
    let valid = qgen_examples(&corpus.valid);
    let test = qgen_examples(&corpus.test);
    let rows = run::<S, QgenTask>(&mut model, &train, &valid, &test, cfg, seed)?;
    Ok((model, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::scene::{generate_scene, scene_rng, SceneConfig};
    use crate::scenes::script::scripted_dialogue;
    use crate::scenes::vocab::Vocabulary;

    fn small_dims() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            cat_dim: 4,
            hidden_dim: 8,
            feature_dim: 32,
            baseline_hidden: 8,
        }
    }

    /// Builds an in-memory corpus of scripted games, split 80/10/10.
    fn make_corpus(n: usize, seed: u64, config: &SceneConfig) -> CorpusData<f64> {
        let vocab = Vocabulary::for_categories(config.n_categories);
        let games: Vec<CorpusGame<f64>> = (0..n)
            .map(|i| {
                let game = generate_scene(&mut scene_rng(seed, i as u64), i as u64, config);
                let s = scripted_dialogue(&game, &vocab, 8);
                CorpusGame { game, dialogue: s.dialogue, success: s.success, solved: s.solved }
            })
            .collect();
        let n_train = n * 8 / 10;
        let n_valid = n / 10;
        CorpusData {
            train: games[..n_train].to_vec(),
            valid: games[n_train..n_train + n_valid].to_vec(),
            test: games[n_train + n_valid..].to_vec(),
            vocab,
        }
    }

    #[test]
    fn all_yes_oracle_reaches_zero_error_quickly() {
        let config = SceneConfig::default();
        let mut corpus = make_corpus(40, 3, &config);
        let keep_yes = |games: &mut Vec<CorpusGame<f64>>| {
            for g in games.iter_mut() {
                g.dialogue.pairs.retain(|p| p.answer == Answer::Yes);
            }
            games.retain(|g| !g.dialogue.pairs.is_empty());
        };
        keep_yes(&mut corpus.train);
        keep_yes(&mut corpus.valid);
        keep_yes(&mut corpus.test);
        let cfg = TrainConfig { lr: 0.5, epochs: 2, ..TrainConfig::default() };
        let (_, rows) = train_oracle(&corpus, &small_dims(), &cfg, 0).unwrap();
        let last_train = rows.iter().rev().find(|r| r.split == "train").unwrap();
        assert_eq!(last_train.error_rate, Some(0.0), "rows: {rows:?}");
    }

    #[test]
    fn one_sgd_step_reduces_fixed_batch_loss() {
        let config = SceneConfig::default();
        let corpus = make_corpus(10, 5, &config);
        let dims = small_dims();
        let mut model = dims
            .build_oracle::<f64>(corpus.vocab.len(), corpus.vocab.n_categories(), 11)
            .unwrap();
        let examples = oracle_examples(&corpus.train).unwrap();
        let batch = &examples[..8.min(examples.len())];

        let batch_loss = |model: &Oracle<f64>| -> f64 {
            batch
                .iter()
                .map(|ex| {
                    let mut tape = Tape::new();
                    let (l, _) = OracleTask::example_loss(model, &mut tape, ex).unwrap();
                    tape.values(l)[0]
                })
                .sum::<f64>()
                / batch.len() as f64
        };
        let before = batch_loss(&model);
        let mut grads = Gradients::new();
        for ex in batch {
            let mut tape = Tape::new();
            let (l, _) = OracleTask::example_loss(&model, &mut tape, ex).unwrap();
            tape.backward(l).unwrap();
            tape.collect_grads(&mut grads);
        }
        grads.scale(1.0 / batch.len() as f64);
        model.store.sgd_step(&grads, 0.05).unwrap();
        let after = batch_loss(&model);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn trainers_are_seed_deterministic() {
        let config = SceneConfig::default();
        let corpus = make_corpus(20, 7, &config);
        let dims = small_dims();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let fmt = |rows: &[EpochRow]| {
            rows.iter().map(|r| r.to_json_line()).collect::<Vec<_>>().join("\n")
        };
        let (o1, r1) = train_oracle(&corpus, &dims, &cfg, 9).unwrap();
        let (o2, r2) = train_oracle(&corpus, &dims, &cfg, 9).unwrap();
        assert_eq!(fmt(&r1), fmt(&r2));
        let bits = |s: &ParamStore<f64>| {
            s.iter()
                .map(|(n, t)| (n.to_string(), t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&o1.store), bits(&o2.store));

        let (g1, gr1) = train_guesser(&corpus, &dims, &cfg, 9).unwrap();
        let (g2, gr2) = train_guesser(&corpus, &dims, &cfg, 9).unwrap();
        assert_eq!(fmt(&gr1), fmt(&gr2));
        assert_eq!(bits(&g1.store), bits(&g2.store));

        let (q1, qr1) = pretrain_qgen(&corpus, &dims, &cfg, 9).unwrap();
        let (q2, qr2) = pretrain_qgen(&corpus, &dims, &cfg, 9).unwrap();
        assert_eq!(fmt(&qr1), fmt(&qr2));
        assert_eq!(bits(&q1.store), bits(&q2.store));
    }

    #[test]
    fn guesser_learns_separable_two_object_scenes() {
        // Two objects of different categories; the scripted question names
        // a category, so the answer pins the target down exactly.
        let config = SceneConfig { k_min: 2, k_max: 2, ..SceneConfig::default() };
        let vocab = Vocabulary::for_categories(config.n_categories);
        let games: Vec<CorpusGame<f64>> = (0..200u64)
            .map(|i| {
                let game = generate_scene(&mut scene_rng(13, i), i, &config);
                let s = scripted_dialogue(&game, &vocab, 8);
                CorpusGame { game, dialogue: s.dialogue, success: s.success, solved: s.solved }
            })
            .filter(|g| {
                g.game.objects[0].category != g.game.objects[1].category && g.success
            })
            .take(60)
            .collect();
        assert!(games.len() >= 40, "only {} separable games", games.len());
        let corpus = CorpusData {
            train: games[..40].to_vec(),
            valid: games[40..50.min(games.len())].to_vec(),
            test: games[50.min(games.len())..].to_vec(),
            vocab,
        };
        let cfg = TrainConfig { lr: 1.0, batch: 4, epochs: 40, ..TrainConfig::default() };
        let (_, rows) = train_guesser(&corpus, &small_dims(), &cfg, 1).unwrap();
        let last_train = rows.iter().rev().find(|r| r.split == "train").unwrap();
        assert!(
            last_train.error_rate.unwrap() <= 0.05,
            "train error stayed at {:?}",
            last_train.error_rate
        );
    }

    #[test]
    fn qgen_memorizes_a_single_repeated_dialogue() {
        let config = SceneConfig::default();
        let vocab = Vocabulary::for_categories(config.n_categories);
        let game = generate_scene::<f64>(&mut scene_rng(50, 0), 0, &config);
        let s = scripted_dialogue(&game, &vocab, 8);
        let one = CorpusGame { game, dialogue: s.dialogue, success: s.success, solved: s.solved };
        let corpus = CorpusData {
            train: vec![one.clone(); 8],
            valid: vec![one.clone()],
            test: vec![one],
            vocab,
        };
        let dims = ModelConfig {
            embed_dim: 8,
            cat_dim: 4,
            hidden_dim: 16,
            feature_dim: 32,
            baseline_hidden: 8,
        };
        let cfg = TrainConfig { lr: 0.5, epochs: 300, batch: 1, ..TrainConfig::default() };
        let (_, rows) = pretrain_qgen(&corpus, &dims, &cfg, 2).unwrap();
        let last_train = rows.iter().rev().find(|r| r.split == "train").unwrap();
        assert!(
            last_train.perplexity.unwrap() < 1.1,
            "perplexity stayed at {:?}",
            last_train.perplexity
        );
    }

    #[test]
    fn one_epoch_beats_uniform_perplexity() {
        let config = SceneConfig::default();
        let corpus = make_corpus(30, 17, &config);
        let cfg = TrainConfig { lr: 0.4, batch: 4, epochs: 1, ..TrainConfig::default() };
        let (_, rows) = pretrain_qgen(&corpus, &small_dims(), &cfg, 3).unwrap();
        let valid = rows.iter().find(|r| r.split == "valid").unwrap();
        assert!(valid.perplexity.unwrap() <= corpus.vocab.len() as f64);
    }

    #[test]
    fn halving_keeps_reported_train_loss_non_increasing() {
        let config = SceneConfig::default();
        let corpus = make_corpus(20, 23, &config);
        // A deliberately unstable learning rate forces rollbacks.
        let cfg = TrainConfig { lr: 2.5, epochs: 8, ..TrainConfig::default() };
        let (_, rows) = train_oracle(&corpus, &small_dims(), &cfg, 4).unwrap();
        let train_losses: Vec<f64> =
            rows.iter().filter(|r| r.split == "train").map(|r| r.loss).collect();
        for pair in train_losses.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss rose: {train_losses:?}");
        }
    }

    #[test]
    fn empty_training_sets_are_errors() {
        let config = SceneConfig::default();
        let corpus = make_corpus(10, 29, &config);
        let empty = CorpusData::<f64> {
            train: Vec::new(),
            valid: corpus.valid.clone(),
            test: corpus.test.clone(),
            vocab: corpus.vocab.clone(),
        };
        let cfg = TrainConfig::default();
        assert!(train_oracle(&empty, &small_dims(), &cfg, 0).is_err());
        assert!(train_guesser(&empty, &small_dims(), &cfg, 0).is_err());
        assert!(pretrain_qgen(&empty, &small_dims(), &cfg, 0).is_err());

        // All-failure corpus: the guesser has nothing to learn from.
        let mut failed = corpus;
        for g in failed.train.iter_mut() {
            g.success = false;
        }
        assert!(train_guesser(&failed, &small_dims(), &cfg, 0).is_err());
    }

    #[test]
    fn metrics_rows_have_the_expected_shape() {
        let config = SceneConfig::default();
        let corpus = make_corpus(20, 31, &config);
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let (_, rows) = train_oracle(&corpus, &small_dims(), &cfg, 0).unwrap();
        // Two train rows, two valid rows, one test row.
        assert_eq!(rows.iter().filter(|r| r.split == "train").count(), 2);
        assert_eq!(rows.iter().filter(|r| r.split == "valid").count(), 2);
        assert_eq!(rows.iter().filter(|r| r.split == "test").count(), 1);
        let line = rows[0].to_json_line();
        assert!(line.contains("\"epoch\"") && line.contains("\"loss\""));
        assert!(line.contains("error_rate") && !line.contains("perplexity"));
    }
}

