//! Policy-gradient fine-tuning of the question generator against a frozen
//! answerer and guesser: Monte-Carlo returns, a learned state-value
//! baseline, the score-function gradient estimator, and the per-epoch
//! training loop.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::params::{derive_seed, Gradients, ParamStore};
use crate::autodiff::tape::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::mdp::{rollout, Decoder, EpisodeLimits, Trajectory};
use crate::models::common::MlpParams;
use crate::models::guesser::Guesser;
use crate::models::oracle::Oracle;
use crate::models::qgen::{QGen, QGenTapeCtx};
use crate::scalar::Scalar;
use crate::scenes::scene::Game;

pub const PREFIX_BASELINE: &str = "baseline";

/// Fine-tuning hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RlConfig {
    pub lr_policy: f64,
    pub lr_baseline: f64,
    pub batch: usize,
    pub epochs: usize,
    pub gamma: f64,
    /// Cap on questions per dialogue.
    pub j_max: usize,
    /// Cap on policy tokens per question.
    pub i_max: usize,
}

impl Default for RlConfig {
    fn default() -> RlConfig {
        RlConfig {
            lr_policy: 0.001,
            lr_baseline: 0.001,
            batch: 64,
            epochs: 80,
            gamma: 1.0,
            j_max: 8,
            i_max: 12,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.lr_policy < 0.0 || self.lr_policy.is_nan() {
            problems.push(format!("lr_policy must be >= 0, got {}", self.lr_policy));
        }
        if self.lr_baseline < 0.0 || self.lr_baseline.is_nan() {
            problems.push(format!("lr_baseline must be >= 0, got {}", self.lr_baseline));
        }
        if self.batch == 0 {
            problems.push("batch must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            problems.push(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.j_max == 0 {
            problems.push("j_max must be positive".into());
        }
        if self.i_max == 0 {
            problems.push("i_max must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn limits(&self) -> EpisodeLimits {
        EpisodeLimits { i_max: self.i_max, j_max: self.j_max }
    }
}

/// Discounted per-step returns. With a single terminal reward the return
/// at step t (0-based, T steps) is `gamma^(T-1-t) * reward`.
pub fn returns<S: Scalar>(traj: &Trajectory<S>, gamma: S) -> Vec<S> {
    let t_count = traj.len();
    (0..t_count)
        .map(|t| gamma.powi((t_count - 1 - t) as i32) * traj.reward)
        .collect()
}

/// State-value estimator: a one-hidden-layer MLP from the policy's
/// recurrent hidden state to a scalar.
#[derive(Debug, Clone)]
pub struct Baseline<S> {
    pub store: ParamStore<S>,
    mlp: MlpParams,
}

impl<S: Scalar> Baseline<S> {
    pub fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Baseline<S>> {
        let mut store = ParamStore::new(seed);
        let mlp = MlpParams::new(PREFIX_BASELINE, input_dim, hidden_dim, 1);
        mlp.register(&mut store)?;
        Ok(Baseline { store, mlp })
    }

    /// Rebuilds the wrapper around checkpointed parameters.
    pub fn from_store(store: ParamStore<S>) -> Result<Baseline<S>> {
        let mlp = MlpParams::infer_dims(PREFIX_BASELINE, &store)?;
        if mlp.out_dim != 1 {
            return Err(Error::Shape(format!(
                "baseline output dim is {}, expected 1",
                mlp.out_dim
            )));
        }
        Ok(Baseline { store, mlp })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.in_dim
    }

    /// Unconstrained value prediction.
    pub fn predict(&self, hidden: &[S]) -> Result<S> {
        Ok(self.mlp.raw_forward(&self.store, hidden)?[0])
    }

    /// Prediction clamped to the reward range [0, 1]; this is the value
    /// the advantage subtracts.
    pub fn predict_clipped(&self, hidden: &[S]) -> Result<S> {
        Ok(self.predict(hidden)?.max(S::zero()).min(S::one()))
    }
}

/// Mean squared error between baseline predictions and returns, pooled
/// over every step of every trajectory, built on the tape. Hidden states
/// enter as constants, so the gradient reaches only baseline parameters.
pub fn baseline_loss_on_tape<S: Scalar>(
    baseline: &Baseline<S>,
    tape: &mut Tape<S>,
    trajs: &[Trajectory<S>],
    gamma: S,
) -> Result<NodeId> {
    let nodes = baseline.mlp.tape_nodes(tape, &baseline.store)?;
    let mut terms = Vec::new();
    for traj in trajs {
        let g = returns(traj, gamma);
        for (step, g_t) in traj.steps.iter().zip(&g) {
            let h = tape.leaf_vector(&step.hidden);
            let pred = baseline.mlp.tape_forward(tape, &nodes, h)?;
            let target = tape.leaf_vector(&[*g_t]);
            let diff = tape.sub(pred, target)?;
            terms.push(tape.mul(diff, diff)?);
        }
    }
    if terms.is_empty() {
        return Err(Error::Invalid("baseline loss over zero steps".into()));
    }
    let n = terms.len();
    let stacked = tape.concat(&terms)?;
    let total = tape.sum(stacked);
    Ok(tape.scale(total, S::of(1.0 / n as f64)))
}

/// The same pooled MSE computed without a tape, for metrics.
pub fn baseline_mse<S: Scalar>(
    baseline: &Baseline<S>,
    trajs: &[Trajectory<S>],
    gamma: S,
) -> Result<S> {
    let mut total = S::zero();
    let mut n = 0usize;
    for traj in trajs {
        let g = returns(traj, gamma);
        for (step, g_t) in traj.steps.iter().zip(&g) {
            let d = baseline.predict(&step.hidden)? - *g_t;
            total += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Invalid("baseline MSE over zero steps".into()));
    }
    Ok(total / S::of(n as f64))
}

/// Replays a recorded trajectory through the taped policy and returns
/// `sum_t weights[t] * (-log pi(action_t))`. The action distribution is
/// re-masked exactly as during the rollout, so node values are
/// bit-identical to the recorded log-probabilities.
pub fn trajectory_loss_on_tape<S: Scalar>(
    qgen: &QGen<S>,
    tape: &mut Tape<S>,
    ctx: &QGenTapeCtx,
    traj: &Trajectory<S>,
    features: &[S],
    weights: &[S],
) -> Result<NodeId> {
    if traj.is_empty() {
        return Err(Error::Invalid("cannot replay an empty trajectory".into()));
    }
    if weights.len() != traj.len() {
        return Err(Error::Shape(format!(
            "{} step weights for a {}-step trajectory",
            weights.len(),
            traj.len()
        )));
    }
    let mut choice_at: Vec<Option<usize>> = vec![None; traj.stream.len() + 1];
    for (idx, step) in traj.steps.iter().enumerate() {
        choice_at[step.stream_pos] = Some(idx);
    }
    let mask = crate::decode::policy_mask(qgen.vocab_size());
    let mask_values: Vec<S> =
        mask.iter().map(|&ok| if ok { S::zero() } else { S::neg_infinity() }).collect();
    let mask_node = tape.leaf_vector(&mask_values);
    let features_node = tape.leaf_vector(features);
    let hidden = qgen.hidden_dim();
    let mut h = tape.leaf_vector(&vec![S::zero(); hidden]);
    let mut c = tape.leaf_vector(&vec![S::zero(); hidden]);
    let mut terms = Vec::new();
    for (pos, &tok) in traj.stream.iter().enumerate() {
        let (logits, h1, c1) = qgen.tape_step(tape, ctx, tok, features_node, h, c)?;
        h = h1;
        c = c1;
        if let Some(idx) = choice_at[pos + 1] {
            let masked = tape.add(logits, mask_node)?;
            let ce = tape.cross_entropy(masked, traj.steps[idx].action)?;
            terms.push(tape.scale(ce, weights[idx]));
        }
    }
    let stacked = tape.concat(&terms)?;
    Ok(tape.sum(stacked))
}

/// Score-function gradient of the mean discounted objective over a batch:
/// the average over trajectories of `sum_t log pi(action_t) * (G_t - b)`,
/// differentiated with respect to policy parameters only. The advantage
/// factor is a constant: no gradient flows through the baseline or the
/// return. The result points in the ascent direction.
pub fn policy_gradient<S: Scalar>(
    qgen: &QGen<S>,
    baseline: &Baseline<S>,
    trajs: &[Trajectory<S>],
    games: &[Game<S>],
    gamma: S,
) -> Result<Gradients<S>> {
    if trajs.is_empty() {
        return Err(Error::Invalid("policy gradient over an empty batch".into()));
    }
    if trajs.len() != games.len() {
        return Err(Error::Shape(format!(
            "{} trajectories but {} games",
            trajs.len(),
            games.len()
        )));
    }
    let mut grads = Gradients::new();
    let names: Vec<String> = qgen.store.names().map(str::to_string).collect();
    for name in &names {
        grads.add_zeros(name, qgen.store.get(name)?.shape());
    }
    for (traj, game) in trajs.iter().zip(games) {
        let g = returns(traj, gamma);
        let mut weights = Vec::with_capacity(traj.len());
        for (step, g_t) in traj.steps.iter().zip(&g) {
            weights.push(*g_t - baseline.predict_clipped(&step.hidden)?);
        }
        if weights.iter().all(|w| *w == S::zero()) {
            continue; // zero advantage contributes exactly nothing
        }
        let mut tape = Tape::new();
        let ctx = qgen.tape_ctx(&mut tape)?;
        let loss =
            trajectory_loss_on_tape(qgen, &mut tape, &ctx, traj, &game.scene_features, &weights)?;
        tape.backward(loss)?;
        tape.collect_grads(&mut grads);
    }
    // Accumulated gradients descend the weighted negative log-likelihood;
    // flip and average to get the ascent direction of the objective.
    grads.scale(S::of(-1.0 / trajs.len() as f64));
    Ok(grads)
}

/// One epoch's aggregate statistics, serialized as a JSONL row.
#[derive(Debug, Clone, Serialize)]
pub struct RlEpochMetrics {
    pub epoch: usize,
    pub success_rate: f64,
    /// Mean policy actions per game.
    pub mean_dialogue_len: f64,
    pub mean_questions: f64,
    pub baseline_mse: f64,
    pub stop_token_fraction: f64,
}

impl RlEpochMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Rolls out every game once (in a seed-shuffled order, fresh uniform
/// target each time) with the sampling decoder, then applies one ascent
/// step to the policy and one descent step to the baseline per batch.
/// Per-game random streams are derived from the epoch seed, so results do
/// not depend on the worker count.
pub fn reinforce_epoch<S: Scalar>(
    qgen: &mut QGen<S>,
    baseline: &mut Baseline<S>,
    oracle: &Oracle<S>,
    guesser: &Guesser<S>,
    games: &[Game<S>],
    config: &RlConfig,
    epoch: usize,
    seed: u64,
    workers: usize,
) -> Result<RlEpochMetrics> {
    if games.is_empty() {
        return Err(Error::Invalid("no games to train on".into()));
    }
    config.validate()?;
    let epoch_seed = derive_seed(seed, epoch as u64);
    let mut order: Vec<usize> = (0..games.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, 0));
        order.shuffle(&mut shuffle_rng);
    }
    let gamma = S::of(config.gamma);
    let limits = config.limits();

    let mut successes = 0.0f64;
    let mut actions = 0usize;
    let mut questions = 0usize;
    let mut stops = 0usize;
    let mut mse_weighted = 0.0f64;

    for chunk in order.chunks(config.batch) {
        let rolled = rollout_batch(qgen, oracle, guesser, games, chunk, limits, epoch_seed, workers)?;
        let (batch_trajs, batch_games): (Vec<_>, Vec<_>) = rolled.into_iter().unzip();

        for traj in &batch_trajs {
            successes += traj.reward.to_f64_lossy();
            actions += traj.len();
            questions += traj.dialogue.pairs.len();
            if traj.dialogue.terminated_by_stop {
                stops += 1;
            }
        }

        let pg = {
            let mut g = policy_gradient(qgen, baseline, &batch_trajs, &batch_games, gamma)?;
            g.scale(S::of(-1.0)); // sgd_step descends; flip to ascend
            g
        };

        let mut tape = Tape::new();
        let loss = baseline_loss_on_tape(baseline, &mut tape, &batch_trajs, gamma)?;
        mse_weighted += tape.values(loss)[0].to_f64_lossy() * batch_trajs.len() as f64;
        tape.backward(loss)?;
        let mut bg = Gradients::new();
        tape.collect_grads(&mut bg);

        qgen.store.sgd_step(&pg, S::of(config.lr_policy))?;
        baseline.store.sgd_step(&bg, S::of(config.lr_baseline))?;
    }

    let n = games.len() as f64;
    Ok(RlEpochMetrics {
        epoch,
        success_rate: successes / n,
        mean_dialogue_len: actions as f64 / n,
        mean_questions: questions as f64 / n,
        baseline_mse: mse_weighted / n,
        stop_token_fraction: stops as f64 / n,
    })
}

/// Rolls out one batch. Each position uses its own seed stream (derived
/// from the epoch seed and the game's shuffled index), so splitting the
/// work across threads cannot change any trajectory.
fn rollout_batch<S: Scalar>(
    qgen: &QGen<S>,
    oracle: &Oracle<S>,
    guesser: &Guesser<S>,
    games: &[Game<S>],
    indices: &[usize],
    limits: EpisodeLimits,
    epoch_seed: u64,
    workers: usize,
) -> Result<Vec<(Trajectory<S>, Game<S>)>> {
    let one = |&index: &usize| -> Result<(Trajectory<S>, Game<S>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, 1 + index as u64));
        let base = &games[index];
        let target = rng.gen_range(0..base.objects.len());
        let game = base.with_target(target);
        let traj = rollout(qgen, oracle, guesser, &game, Decoder::Sample, limits, &mut rng)?;
        Ok((traj, game))
    };
    if workers <= 1 {
        return indices.iter().map(one).collect();
    }
    let chunk_size = indices.len().div_ceil(workers);
    let mut out: Vec<Option<(Trajectory<S>, Game<S>)>> = Vec::new();
    out.resize_with(indices.len(), || None);
    let mut result: Result<()> = Ok(());
    let one_ref = &one;
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (chunk_no, chunk) in indices.chunks(chunk_size).enumerate() {
            handles.push((
                chunk_no * chunk_size,
                scope.spawn(move || chunk.iter().map(one_ref).collect::<Result<Vec<_>>>()),
            ));
        }
        for (offset, handle) in handles {
            match handle.join().expect("rollout worker panicked") {
                Ok(items) => {
                    for (i, item) in items.into_iter().enumerate() {
                        out[offset + i] = Some(item);
                    }
                }
                Err(e) => result = Err(e),
            }
        }
    });
    result?;
    Ok(out.into_iter().map(|o| o.expect("all slots filled")).collect())
}

/// Runs the full fine-tuning schedule, invoking `on_epoch` after each
/// epoch (for logging or checkpointing).
pub fn train<S: Scalar>(
    qgen: &mut QGen<S>,
    baseline: &mut Baseline<S>,
    oracle: &Oracle<S>,
    guesser: &Guesser<S>,
    games: &[Game<S>],
    config: &RlConfig,
    seed: u64,
    workers: usize,
    mut on_epoch: impl FnMut(&RlEpochMetrics) -> Result<()>,
) -> Result<Vec<RlEpochMetrics>> {
    let mut all = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let metrics =
            reinforce_epoch(qgen, baseline, oracle, guesser, games, config, epoch, seed, workers)?;
        on_epoch(&metrics)?;
        all.push(metrics);
    }
    Ok(all)
}
