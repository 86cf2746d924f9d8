//! Frozen-model evaluation: success rates with run-to-run spread, the
//! accuracy grid over decoders and training stages, and dialogue statistics
//! (length/success histogram, vocabulary usage).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::params::derive_seed;
use crate::error::{Error, Result};
use crate::mdp::{rollout, Answerer, Decoder, EpisodeLimits, TargetGuesser, Trajectory};
use crate::models::guesser::Guesser;
use crate::models::oracle::Oracle;
use crate::models::qgen::QGen;
use crate::scalar::Scalar;
use crate::scenes::corpus::CorpusGame;
use crate::scenes::scene::Game;
use crate::scenes::vocab::Vocabulary;

/// How the target object is chosen for each evaluated game.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// Keep the target stored with each scene (held-out-scene evaluation).
    Stored,
    /// Draw a fresh uniform target every run — measures generalization to
    /// new targets on scenes whose stored targets were seen in training.
    Resampled,
}

/// Settings shared by every cell of the report grid.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Independent evaluation runs; the spread over runs is reported.
    pub n_runs: usize,
    pub limits: EpisodeLimits,
    pub seed: u64,
    /// Worker threads for the per-scene rollouts. Seeds are derived per
    /// scene, so the worker count never changes any number.
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> EvalConfig {
        EvalConfig {
            n_runs: 5,
            limits: EpisodeLimits { i_max: 12, j_max: 8 },
            seed: 0,
            workers: 1,
        }
    }
}

/// Success-rate measurement over one scene set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    /// Mean success rate over runs.
    pub mean: f64,
    /// Population standard deviation over runs.
    pub stddev: f64,
    /// One success rate per run.
    pub per_run: Vec<f64>,
}

/// Plays every scene `n_runs` times and reports the mean success rate and
/// its spread across runs.
///
/// Each run uses its own seed stream; with a stochastic decoder the spread
/// reflects sampling noise, with a deterministic decoder and stored targets
/// it is exactly zero.
pub fn evaluate<S: Scalar>(
    qgen: &QGen<S>,
    answerer: &(impl Answerer<S> + Sync),
    guesser: &(impl TargetGuesser<S> + Sync),
    games: &[Game<S>],
    decoder: Decoder,
    targets: TargetMode,
    cfg: &EvalConfig,
) -> Result<EvalOutcome> {
    if games.is_empty() {
        return Err(Error::Invalid("no scenes to evaluate".into()));
    }
    if cfg.n_runs == 0 {
        return Err(Error::Invalid("evaluation needs at least one run".into()));
    }
    let mut per_run = Vec::with_capacity(cfg.n_runs);
    for run in 0..cfg.n_runs {
        let run_seed = derive_seed(cfg.seed, run as u64);
        let trajectories = collect_rollouts(
            qgen, answerer, guesser, games, decoder, targets, cfg.limits, run_seed, cfg.workers,
        )?;
        let successes: f64 = trajectories.iter().map(|t| t.reward.to_f64_lossy()).sum();
        per_run.push(successes / games.len() as f64);
    }
    let mean = per_run.iter().sum::<f64>() / per_run.len() as f64;
    // Identical runs (deterministic decoder, stored targets) must report a
    // spread of exactly zero, not rounding residue from the mean.
    let stddev = if per_run.iter().all(|&r| r == per_run[0]) {
        0.0
    } else {
        let var =
            per_run.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / per_run.len() as f64;
        var.sqrt()
    };
    Ok(EvalOutcome { mean, stddev, per_run })
}

/// One rollout per scene, in scene order, optionally in parallel. Each
/// scene's RNG is seeded from `run_seed` and its index, so results are
/// independent of the worker count.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts<S: Scalar>(
    qgen: &QGen<S>,
    answerer: &(impl Answerer<S> + Sync),
    guesser: &(impl TargetGuesser<S> + Sync),
    games: &[Game<S>],
    decoder: Decoder,
    targets: TargetMode,
    limits: EpisodeLimits,
    run_seed: u64,
    workers: usize,
) -> Result<Vec<Trajectory<S>>> {
    let one = |index: usize| -> Result<Trajectory<S>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, index as u64));
        let base = &games[index];
        let resampled;
        let played = match targets {
            TargetMode::Stored => base,
            TargetMode::Resampled => {
                resampled = base.with_target(rng.gen_range(0..base.objects.len()));
                &resampled
            }
        };
        rollout(qgen, answerer, guesser, played, decoder, limits, &mut rng)
    };
    if workers <= 1 {
        return (0..games.len()).map(one).collect();
    }
    let chunk_size = games.len().div_ceil(workers);
    let mut out: Vec<Option<Trajectory<S>>> = Vec::new();
    out.resize_with(games.len(), || None);
    let mut result: Result<()> = Ok(());
    let one_ref = &one;
    let indices: Vec<usize> = (0..games.len()).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (chunk_no, chunk) in indices.chunks(chunk_size).enumerate() {
            handles.push((
                chunk_no * chunk_size,
                scope.spawn(move || chunk.iter().map(|&i| one_ref(i)).collect::<Result<Vec<_>>>()),
            ));
        }
        for (offset, handle) in handles {
            match handle.join().expect("evaluation worker panicked") {
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

/// Success rate of the scripted questioner with the exact answerer on a
/// corpus split — the reference that report percentages are relative to.
pub fn scripted_reference_rate<S: Scalar>(games: &[CorpusGame<S>]) -> f64 {
    if games.is_empty() {
        return 0.0;
    }
    games.iter().filter(|g| g.success).count() as f64 / games.len() as f64
}

/// Row label for each decoder in the report grid.
pub fn decoder_label(decoder: Decoder) -> &'static str {
    match decoder {
        Decoder::Sample => "Sampling",
        Decoder::Greedy => "Greedy",
        Decoder::Beam { .. } => "BSearch",
    }
}

/// One row of the accuracy grid: a training stage under one decoder,
/// measured on both scene splits.
#[derive(Debug, Clone)]
pub struct ReportRow {
    /// Training-stage label, e.g. "Baseline" (supervised) or "REINFORCE".
    pub model: String,
    /// Decoder label from [`decoder_label`].
    pub decoder: String,
    /// Train scenes replayed with fresh uniform targets.
    pub new_objects: EvalOutcome,
    /// Held-out scenes with their stored targets.
    pub new_pictures: EvalOutcome,
}

/// The accuracy grid plus the scripted reference rates that cells are
/// expressed against.
#[derive(Debug, Clone)]
pub struct Report {
    /// Scripted-questioner success rate on the train split.
    pub reference_new_objects: f64,
    /// Scripted-questioner success rate on the held-out split.
    pub reference_new_pictures: f64,
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// Plain-text grid: success as a percentage of the scripted reference,
    /// then raw rates, one row per (model, decoder).
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Scripted reference success: new objects {:.2}%, new pictures {:.2}%",
            100.0 * self.reference_new_objects,
            100.0 * self.reference_new_pictures,
        );
        out.push('\n');
        out.push_str("Success as % of scripted reference\n");
        let _ = writeln!(out, "{:<12}{:<10}{:<20}{:<20}", "Model", "Decoder", "New Objects", "New Pictures");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<12}{:<10}{:<20}{:<20}",
                row.model,
                row.decoder,
                percent_cell(&row.new_objects, self.reference_new_objects),
                percent_cell(&row.new_pictures, self.reference_new_pictures),
            );
        }
        out.push('\n');
        out.push_str("Raw success rate\n");
        let _ = writeln!(out, "{:<12}{:<10}{:<20}{:<20}", "Model", "Decoder", "New Objects", "New Pictures");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<12}{:<10}{:<20}{:<20}",
                row.model,
                row.decoder,
                raw_cell(&row.new_objects),
                raw_cell(&row.new_pictures),
            );
        }
        out
    }

    /// Long-format CSV: one line per (model, decoder, split).
    pub fn render_csv(&self) -> String {
        let mut out = String::from("model,decoder,split,success_rate,stddev,pct_of_reference,pct_stddev\n");
        for row in &self.rows {
            for (split, cell, reference) in [
                ("new_objects", &row.new_objects, self.reference_new_objects),
                ("new_pictures", &row.new_pictures, self.reference_new_pictures),
            ] {
                let (pct, pct_sd) = match percent_of(cell.mean, reference) {
                    Some(p) => (format!("{p}"), format!("{}", 100.0 * cell.stddev / reference)),
                    None => ("".into(), "".into()),
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    row.model, row.decoder, split, cell.mean, cell.stddev, pct, pct_sd,
                );
            }
        }
        out
    }
}

fn percent_of(value: f64, reference: f64) -> Option<f64> {
    (reference > 0.0).then(|| 100.0 * value / reference)
}

fn percent_cell(cell: &EvalOutcome, reference: f64) -> String {
    match percent_of(cell.mean, reference) {
        Some(p) => format!("{:.2}% ± {:.2}", p, 100.0 * cell.stddev / reference),
        None => "n/a".into(),
    }
}

fn raw_cell(cell: &EvalOutcome) -> String {
    format!("{:.4} ± {:.4}", cell.mean, cell.stddev)
}

/// Fills the whole grid: every (model, decoder) pair on both splits.
///
/// Train scenes are played with fresh uniform targets each run; held-out
/// scenes keep their stored targets. All cells share the same seed streams,
/// so repeated calls with identical inputs reproduce every digit.
pub fn build_report<S: Scalar>(
    models: &[(String, &QGen<S>)],
    oracle: &Oracle<S>,
    guesser: &Guesser<S>,
    train: &[CorpusGame<S>],
    held_out: &[CorpusGame<S>],
    decoders: &[Decoder],
    cfg: &EvalConfig,
) -> Result<Report> {
    let train_games: Vec<Game<S>> = train.iter().map(|g| g.game.clone()).collect();
    let held_out_games: Vec<Game<S>> = held_out.iter().map(|g| g.game.clone()).collect();
    let mut rows = Vec::new();
    for (label, qgen) in models {
        for &decoder in decoders {
            let new_objects =
                evaluate(*qgen, oracle, guesser, &train_games, decoder, TargetMode::Resampled, cfg)?;
            let new_pictures =
                evaluate(*qgen, oracle, guesser, &held_out_games, decoder, TargetMode::Stored, cfg)?;
            rows.push(ReportRow {
                model: label.clone(),
                decoder: decoder_label(decoder).to_string(),
                new_objects,
                new_pictures,
            });
        }
    }
    Ok(Report {
        reference_new_objects: scripted_reference_rate(train),
        reference_new_pictures: scripted_reference_rate(held_out),
        rows,
    })
}

/// One histogram bucket: games whose dialogue asked `questions` questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthBucket {
    pub questions: usize,
    pub games: usize,
    pub successes: usize,
}

impl LengthBucket {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.games as f64
    }
}

/// Buckets finished games by question count, in increasing order.
///
/// The bucket counts always sum to the number of trajectories.
pub fn length_success_curve<S: Scalar>(trajectories: &[Trajectory<S>]) -> Vec<LengthBucket> {
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for t in trajectories {
        let entry = buckets.entry(t.dialogue.pairs.len()).or_insert((0, 0));
        entry.0 += 1;
        if t.reward > S::zero() {
            entry.1 += 1;
        }
    }
    buckets
        .into_iter()
        .map(|(questions, (games, successes))| LengthBucket { questions, games, successes })
        .collect()
}

/// CSV rows for the length/success histogram.
pub fn curve_csv(buckets: &[LengthBucket]) -> String {
    let mut out = String::from("questions,games,successes,success_rate\n");
    for b in buckets {
        let _ = writeln!(out, "{},{},{},{}", b.questions, b.games, b.successes, b.success_rate());
    }
    out
}

/// Distinct-word statistics over the tokens a policy actually emitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabUsage {
    /// Number of distinct non-control words.
    pub unique_words: usize,
    /// (word, occurrences), most frequent first; ties alphabetical.
    pub frequencies: Vec<(String, usize)>,
}

impl VocabUsage {
    pub fn render_csv(&self) -> String {
        let mut out = String::from("word,count\n");
        for (word, count) in &self.frequencies {
            let _ = writeln!(out, "{word},{count}");
        }
        out
    }
}

/// Counts every non-control token the questioner emitted, including words
/// of a partial question later discarded by a stop. Control tokens
/// (sentinels, the question mark, answers) are excluded.
pub fn vocab_usage<S: Scalar>(
    trajectories: &[Trajectory<S>],
    vocab: &Vocabulary,
) -> Result<VocabUsage> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for t in trajectories {
        for &tok in &t.stream {
            if !vocab.is_control(tok) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
    }
    let mut frequencies: Vec<(String, usize)> = counts
        .into_iter()
        .map(|(tok, n)| Ok((vocab.token(tok)?.to_string(), n)))
        .collect::<Result<_>>()?;
    frequencies.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(VocabUsage { unique_words: frequencies.len(), frequencies })
}
