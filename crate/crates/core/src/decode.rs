//! Decoding strategies for the question generator: categorical sampling,
//! greedy argmax, and per-question beam search.
//!
//! All decoders work through a step closure `(prev_token, h, c) -> (logits,
//! h', c')` so they stay independent of the model structs, and all of them
//! draw only from the policy's action set: answer tokens and sentinels are
//! masked out (the generator asks questions, it never answers them).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::kernel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scenes::vocab::{NA, NO, PAD, QMARK, START, STOP, YES};

/// One policy step: feed the previous token, get next-token logits and the
/// updated recurrent state.
pub trait PolicyStep<S> {
    fn step(&mut self, prev_token: usize, h: &[S], c: &[S]) -> Result<(Vec<S>, Vec<S>, Vec<S>)>;
}

impl<S, F> PolicyStep<S> for F
where
    F: FnMut(usize, &[S], &[S]) -> Result<(Vec<S>, Vec<S>, Vec<S>)>,
{
    fn step(&mut self, prev_token: usize, h: &[S], c: &[S]) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
        self(prev_token, h, c)
    }
}

/// True for every token the policy may emit: question words plus the
/// question mark and the stop token.
pub fn policy_mask(vocab_size: usize) -> Vec<bool> {
    (0..vocab_size).map(|t| !matches!(t, PAD | START | YES | NO | NA)).collect()
}

/// Logits with masked-out entries forced to negative infinity.
pub fn apply_mask<S: Scalar>(logits: &mut [S], mask: &[bool]) {
    for (l, &keep) in logits.iter_mut().zip(mask) {
        if !keep {
            *l = S::neg_infinity();
        }
    }
}

/// Draws from a categorical distribution by inverse CDF with one uniform
/// draw. The input must be normalized to 1e-9.
pub fn sample_token<S: Scalar>(dist: &[S], rng: &mut ChaCha8Rng) -> Result<usize> {
    let total: S = dist.iter().copied().sum();
    if (total.to_f64_lossy() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "distribution sums to {}, not 1",
            total.to_f64_lossy()
        )));
    }
    let u = S::of(rng.gen::<f64>());
    let mut acc = S::zero();
    let mut last_positive = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > S::zero() {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding pushed the CDF fractionally below u; the draw belongs to the
    // last token with any mass.
    Ok(last_positive)
}

/// Argmax with lowest-index tie-break.
pub fn greedy_token<S: Scalar>(dist: &[S]) -> usize {
    let mut best = 0usize;
    for i in 1..dist.len() {
        if dist[i] > dist[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone)]
struct Candidate<S> {
    tokens: Vec<usize>,
    sum_logp: S,
    h: Vec<S>,
    c: Vec<S>,
}

#[derive(Clone)]
struct Finished<S> {
    tokens: Vec<usize>,
    score: S,
}

/// Beam search over one question: expands the `width` best partial
/// sequences by summed log-probability until each ends with the question
/// mark (chosen, or forced after `i_max` ordinary tokens) or the stop
/// token, then returns the finished sequence with the best final score —
/// summed log-probability divided by token count when `normalize` is set.
///
/// The forced closing question mark counts toward the length but carries no
/// log-probability: it is not a policy choice.
pub fn beam_search_question<S: Scalar, P: PolicyStep<S>>(
    policy: &mut P,
    prev_token: usize,
    h0: &[S],
    c0: &[S],
    mask: &[bool],
    width: usize,
    i_max: usize,
    normalize: bool,
) -> Result<Vec<usize>> {
    if width == 0 {
        return Err(Error::Invalid("beam width must be at least 1".into()));
    }
    let final_score = |sum: S, len: usize| {
        if normalize { sum / S::of(len as f64) } else { sum }
    };
    let mut alive = vec![Candidate {
        tokens: Vec::new(),
        sum_logp: S::zero(),
        h: h0.to_vec(),
        c: c0.to_vec(),
    }];
    let mut finished: Vec<Finished<S>> = Vec::new();

    while !alive.is_empty() {
        let mut expansions: Vec<Candidate<S>> = Vec::new();
        for cand in &alive {
            let prev = cand.tokens.last().copied().unwrap_or(prev_token);
            let (mut logits, h, c) = policy.step(prev, &cand.h, &cand.c)?;
            apply_mask(&mut logits, mask);
            let logp = kernel::log_softmax(&logits);
            for (tok, &lp) in logp.iter().enumerate() {
                if !mask[tok] {
                    continue;
                }
                let mut tokens = cand.tokens.clone();
                tokens.push(tok);
                expansions.push(Candidate {
                    tokens,
                    sum_logp: cand.sum_logp + lp,
                    h: h.clone(),
                    c: c.clone(),
                });
            }
        }
        // Stable order: ties keep candidate-then-token enumeration order.
        expansions.sort_by(|a, b| {
            b.sum_logp.partial_cmp(&a.sum_logp).unwrap_or(std::cmp::Ordering::Equal)
        });
        expansions.truncate(width);

        alive = Vec::new();
        for cand in expansions {
            let last = *cand.tokens.last().expect("expansion has a token");
            if last == QMARK || last == STOP {
                finished.push(Finished {
                    score: final_score(cand.sum_logp, cand.tokens.len()),
                    tokens: cand.tokens,
                });
            } else if cand.tokens.len() == i_max {
                // Out of room: close the question without charging the
                // policy for the question mark.
                let mut tokens = cand.tokens;
                tokens.push(QMARK);
                finished.push(Finished { score: final_score(cand.sum_logp, tokens.len()), tokens });
            } else {
                alive.push(cand);
            }
        }
    }

    let best = finished
        .into_iter()
        .reduce(|best, cand| if cand.score > best.score { cand } else { best })
        .expect("at least one candidate always finishes");
    Ok(best.tokens)
}

/// Summed log-probability of a fixed question under the policy, with the
/// same forced-closure convention as the beam: a final question mark beyond
/// `i_max` ordinary tokens is free. Returns (sum, length).
pub fn question_logprob<S: Scalar, P: PolicyStep<S>>(
    policy: &mut P,
    prev_token: usize,
    h0: &[S],
    c0: &[S],
    mask: &[bool],
    i_max: usize,
    tokens: &[usize],
) -> Result<(S, usize)> {
    let mut h = h0.to_vec();
    let mut c = c0.to_vec();
    let mut prev = prev_token;
    let mut sum = S::zero();
    let forced_tail = tokens.len() == i_max + 1 && tokens.last() == Some(&QMARK);
    for (i, &tok) in tokens.iter().enumerate() {
        let (mut logits, h1, c1) = policy.step(prev, &h, &c)?;
        if !(forced_tail && i == tokens.len() - 1) {
            apply_mask(&mut logits, mask);
            sum += kernel::log_softmax(&logits)[tok];
        }
        h = h1;
        c = c1;
        prev = tok;
    }
    Ok((sum, tokens.len()))
}
