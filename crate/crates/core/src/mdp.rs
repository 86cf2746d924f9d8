//! The token-level decision process a full game runs in: the policy emits
//! one vocabulary token per step, questions close on the question mark (or
//! by force at the length cap), the answerer fills in answers, the stop
//! token ends the dialogue, and the guesser's final pick yields a zero-one
//! terminal reward.

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::kernel;
use crate::decode::{beam_search_question, greedy_token, policy_mask, sample_token};
use crate::error::{Error, Result};
use crate::models::guesser::{guesser_stream, Guesser, GuesserObject};
use crate::models::oracle::Oracle;
use crate::models::qgen::QGen;
use crate::scalar::Scalar;
use crate::scenes::scene::{spatial_features, Game};
use crate::scenes::script::{Dialogue, QaPair};
use crate::scenes::vocab::{Answer, QMARK, START, STOP};

/// Per-episode caps: at most `i_max` policy tokens per question and
/// `j_max` questions per dialogue.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeLimits {
    pub i_max: usize,
    pub j_max: usize,
}

/// Anything able to answer a closed question about a game's target.
pub trait Answerer<S: Scalar> {
    fn answer(&self, question: &[usize], game: &Game<S>) -> Result<Answer>;
}

impl<S: Scalar> Answerer<S> for Oracle<S> {
    fn answer(&self, question: &[usize], game: &Game<S>) -> Result<Answer> {
        let target = game.target();
        let spatial = spatial_features::<S>(target.bbox, game.width, game.height)?;
        Oracle::answer(self, question, target.category, &spatial)
    }
}

/// Anything able to pick an object index from a finished dialogue.
pub trait TargetGuesser<S: Scalar> {
    fn guess(&self, dialogue: &Dialogue, game: &Game<S>) -> Result<usize>;
}

impl<S: Scalar> TargetGuesser<S> for Guesser<S> {
    fn guess(&self, dialogue: &Dialogue, game: &Game<S>) -> Result<usize> {
        let objects = GuesserObject::from_game(game)?;
        Guesser::guess(self, &guesser_stream(dialogue), &objects)
    }
}

/// A guesser that always picks the hidden target; used to isolate the
/// questioner in evaluations.
pub struct PerfectGuesser;

impl<S: Scalar> TargetGuesser<S> for PerfectGuesser {
    fn guess(&self, _dialogue: &Dialogue, game: &Game<S>) -> Result<usize> {
        Ok(game.target_index)
    }
}

/// What a [`transition`] did with the action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionOutcome {
    /// Ordinary token appended to the open question.
    Extended,
    /// Question closed (chosen mark, or forced at the cap) and answered.
    Closed { forced: bool, answer: Answer },
    /// Stop token: dialogue over, open question discarded.
    Stopped,
}

/// Live episode bookkeeping.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    /// Policy tokens of the open question (no forced marks).
    pub partial: Vec<usize>,
    pub history: Dialogue,
    /// Policy actions taken so far.
    pub actions: usize,
    pub terminal: bool,
    pub limits: EpisodeLimits,
}

impl EpisodeState {
    pub fn new(limits: EpisodeLimits) -> EpisodeState {
        EpisodeState {
            partial: Vec::new(),
            history: Dialogue::default(),
            actions: 0,
            // A zero-question cap leaves no legal action.
            terminal: limits.j_max == 0,
            limits,
        }
    }

    pub fn questions_asked(&self) -> usize {
        self.history.pairs.len()
    }
}

/// Applies one policy action. Answer tokens and sentinels are not legal
/// actions — only the answerer produces answers.
pub fn transition<S: Scalar>(
    state: &mut EpisodeState,
    action: usize,
    answerer: &impl Answerer<S>,
    game: &Game<S>,
) -> Result<TransitionOutcome> {
    if state.terminal {
        return Err(Error::Invalid("action applied to a terminal episode".into()));
    }
    use crate::scenes::vocab::{NA, NO, PAD, YES};
    if [PAD, START, YES, NO, NA].contains(&action) {
        return Err(Error::Invalid(format!("token {action} is not a legal policy action")));
    }
    state.actions += 1;

    if action == STOP {
        state.partial.clear();
        state.terminal = true;
        state.history.terminated_by_stop = true;
        return Ok(TransitionOutcome::Stopped);
    }

    let forced = if action == QMARK {
        state.partial.push(QMARK);
        false
    } else {
        state.partial.push(action);
        if state.partial.len() < state.limits.i_max {
            return Ok(TransitionOutcome::Extended);
        }
        // Out of room: close on the policy's behalf.
        state.partial.push(QMARK);
        true
    };

    let question = std::mem::take(&mut state.partial);
    let answer = answerer.answer(&question, game)?;
    state.history.pairs.push(QaPair { question, answer });
    if state.questions_asked() >= state.limits.j_max {
        state.terminal = true;
    }
    Ok(TransitionOutcome::Closed { forced, answer })
}

/// Zero-one terminal reward: 1 iff the guesser picks the target.
pub fn reward<S: Scalar>(
    state: &EpisodeState,
    guesser: &impl TargetGuesser<S>,
    game: &Game<S>,
) -> Result<S> {
    if !state.terminal {
        return Err(Error::Invalid("reward queried before the episode ended".into()));
    }
    let pick = guesser.guess(&state.history, game)?;
    Ok(if pick == game.target_index { S::one() } else { S::zero() })
}

/// One policy decision inside a trajectory.
#[derive(Debug, Clone)]
pub struct StepRecord<S> {
    pub action: usize,
    /// log π(action | state) under the masked policy at decision time.
    pub log_prob: S,
    /// Recurrent hidden state the decision was made from (baseline input).
    pub hidden: Vec<S>,
    /// Length of the consumed-token prefix at decision time; replaying the
    /// stream to this point reproduces the decision context.
    pub stream_pos: usize,
}

/// A finished episode with everything gradient estimation needs.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub scene_id: u64,
    pub target_index: usize,
    pub steps: Vec<StepRecord<S>>,
    /// Every token the policy network consumed, in order: the start
    /// sentinel, question tokens, forced marks, and answer tokens. The stop
    /// action is never consumed.
    pub stream: Vec<usize>,
    pub dialogue: Dialogue,
    pub reward: S,
}

impl<S: Scalar> Trajectory<S> {
    /// Policy actions taken (the episode length T).
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_log_prob(&self) -> S {
        self.steps.iter().map(|s| s.log_prob).sum()
    }
}

/// Token selection strategy for rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoder {
    Sample,
    Greedy,
    Beam { width: usize },
}

impl Decoder {
    pub fn parse(s: &str) -> Result<Decoder> {
        match s {
            "sampling" | "sample" => Ok(Decoder::Sample),
            "greedy" => Ok(Decoder::Greedy),
            "beam" => Ok(Decoder::Beam { width: 5 }),
            other => Err(Error::Invalid(format!(
                "unknown decoder '{other}' (expected sampling, greedy, or beam)"
            ))),
        }
    }
}

/// Plays one full game and records the trajectory.
///
/// The policy network consumes the dialogue token stream exactly as in
/// supervised training: start sentinel, question tokens, the closing mark,
/// then the answer token. Beam decoding plans one question at a time and
/// replays the plan through the same live state.
pub fn rollout<S: Scalar>(
    qgen: &QGen<S>,
    answerer: &impl Answerer<S>,
    guesser: &impl TargetGuesser<S>,
    game: &Game<S>,
    decoder: Decoder,
    limits: EpisodeLimits,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory<S>> {
    let raw = qgen.raw()?;
    let mask = policy_mask(qgen.vocab_size());
    let features = &game.scene_features;
    let mut state = EpisodeState::new(limits);
    let mut steps: Vec<StepRecord<S>> = Vec::new();
    let mut stream: Vec<usize> = Vec::new();

    let (mut h, mut c) = raw.zero_state();
    let mut logits: Vec<S> = Vec::new();
    // Feeds one token and leaves `logits` predicting the next.
    let consume = |tok: usize, h: &mut Vec<S>, c: &mut Vec<S>, logits: &mut Vec<S>, stream: &mut Vec<usize>| -> Result<()> {
        let (l, h1, c1) = raw.step(tok, features, h, c)?;
        *logits = l;
        *h = h1;
        *c = c1;
        stream.push(tok);
        Ok(())
    };
    consume(START, &mut h, &mut c, &mut logits, &mut stream)?;

    // Tokens the beam planned for the current question, executed in order.
    let mut planned: Vec<usize> = Vec::new();
    while !state.terminal {
        let action = match decoder {
            Decoder::Sample => {
                let mut masked = logits.clone();
                crate::decode::apply_mask(&mut masked, &mask);
                sample_token(&kernel::softmax(&masked), rng)?
            }
            Decoder::Greedy => {
                let mut masked = logits.clone();
                crate::decode::apply_mask(&mut masked, &mask);
                greedy_token(&kernel::softmax(&masked))
            }
            Decoder::Beam { width } => {
                if planned.is_empty() {
                    let prev = *stream.last().expect("stream starts non-empty");
                    let mut step_fn = |tok: usize, hh: &[S], cc: &[S]| raw.step(tok, features, hh, cc);
                    planned = beam_search_question(
                        &mut step_fn,
                        prev,
                        &h,
                        &c,
                        &mask,
                        width,
                        limits.i_max,
                        true,
                    )?;
                    planned.reverse(); // pop() executes front-first
                }
                planned.pop().expect("plan is non-empty")
            }
        };

        let mut masked = logits.clone();
        crate::decode::apply_mask(&mut masked, &mask);
        let log_prob = kernel::log_softmax(&masked)[action];
        steps.push(StepRecord { action, log_prob, hidden: h.clone(), stream_pos: stream.len() });

        let outcome = transition(&mut state, action, answerer, game)?;
        match outcome {
            TransitionOutcome::Stopped => break,
            TransitionOutcome::Extended => {
                consume(action, &mut h, &mut c, &mut logits, &mut stream)?;
            }
            TransitionOutcome::Closed { forced, answer } => {
                // The plan's own forced mark duplicates the transition's;
                // drop it rather than executing it as an action.
                planned.clear();
                if state.terminal {
                    break;
                }
                consume(action, &mut h, &mut c, &mut logits, &mut stream)?;
                if forced {
                    consume(QMARK, &mut h, &mut c, &mut logits, &mut stream)?;
                }
                consume(answer.token(), &mut h, &mut c, &mut logits, &mut stream)?;
            }
        }
    }

    let r = reward(&state, guesser, game)?;
    Ok(Trajectory {
        scene_id: game.scene_id,
        target_index: game.target_index,
        steps,
        stream,
        dialogue: state.history,
        reward: r,
    })
}

#[derive(Serialize)]
struct TrajectoryDump {
    scene_id: u64,
    tokens: Vec<String>,
    answers: Vec<String>,
    reward: f64,
    length: usize,
}

/// One-line JSON debug dump of a trajectory.
pub fn dump_trajectory<S: Scalar>(
    traj: &Trajectory<S>,
    vocab: &crate::scenes::vocab::Vocabulary,
) -> String {
    let dump = TrajectoryDump {
        scene_id: traj.scene_id,
        tokens: traj
            .steps
            .iter()
            .map(|s| vocab.token(s.action).unwrap_or("<bad>").to_string())
            .collect(),
        answers: traj.dialogue.pairs.iter().map(|p| p.answer.as_str().to_string()).collect(),
        reward: traj.reward.to_f64_lossy(),
        length: traj.len(),
    };
    serde_json::to_string(&dump).expect("dump serializes")
}
