//! The five pipeline commands. Each one reads inputs, writes everything it
//! produces under its output directory (including the effective config),
//! and never mutates its inputs.

use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use guessrl::autodiff::{derive_seed, load_checkpoint, save_checkpoint};
use guessrl::eval_report::{
    build_report, collect_rollouts, curve_csv, length_success_curve, vocab_usage, EvalConfig,
    TargetMode,
};
use guessrl::mdp::{dump_trajectory, Decoder, TargetGuesser};
use guessrl::models::{Guesser, Oracle, QGen};
use guessrl::reinforce::{self, Baseline};
use guessrl::scenes::{
    category_name, generate_corpus, load_corpus, CorpusData, CorpusGame, CorpusPaths, Game, QMARK,
};
use guessrl::supervised::{pretrain_qgen, train_guesser, train_oracle, EpochRow};
use guessrl::Real;

use crate::config::AppConfig;

/// Generates the corpus files (three splits plus vocabulary) under `out`.
pub fn gen_data(cfg: &AppConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let paths =
        generate_corpus::<Real>(out, cfg.n_scenes, cfg.data_seed, &cfg.scene, cfg.max_questions)?;
    cfg.dump(out)?;
    let corpus = load_corpus::<Real>(&paths, &cfg.scene)?;
    println!(
        "wrote {} train / {} valid / {} test games and {} vocabulary words to {}",
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len(),
        corpus.vocab.len(),
        out.display()
    );
    Ok(())
}

/// Trains the answerer, guesser, and question generator on the corpus and
/// writes one checkpoint plus one metrics file per model under `out`.
pub fn pretrain(cfg: &AppConfig, data: &Path, out: &Path) -> Result<()> {
    cfg.validate()?;
    let corpus = load_data(cfg, data)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let dims = cfg.model();

    let (oracle, rows) = train_oracle::<Real>(&corpus, &dims, &cfg.supervised, cfg.supervised_seed)?;
    save_model(&oracle.store, &rows, out, "oracle")?;

    let (guesser, rows) =
        train_guesser::<Real>(&corpus, &dims, &cfg.supervised, cfg.supervised_seed)?;
    save_model(&guesser.store, &rows, out, "guesser")?;

    let (qgen, rows) = pretrain_qgen::<Real>(&corpus, &dims, &cfg.supervised, cfg.supervised_seed)?;
    save_model(&qgen.store, &rows, out, "qgen")?;

    cfg.dump(out)
}

/// Fine-tunes the pretrained question generator with policy gradients
/// against the frozen answerer and guesser; writes the tuned policy, the
/// learned baseline, and per-epoch metrics under `out`.
pub fn rl_train(
    cfg: &AppConfig,
    data: &Path,
    checkpoints: &Path,
    out: &Path,
    workers: usize,
) -> Result<()> {
    cfg.validate()?;
    let corpus = load_data(cfg, data)?;
    let oracle: Oracle<Real> = Oracle::from_store(load_store(checkpoints, "oracle.json")?)?;
    let guesser: Guesser<Real> = Guesser::from_store(load_store(checkpoints, "guesser.json")?)?;
    let mut qgen: QGen<Real> = QGen::from_store(load_store(checkpoints, "qgen.json")?)?;
    let mut baseline: Baseline<Real> =
        Baseline::new(qgen.hidden_dim(), cfg.baseline_hidden, cfg.rl_seed)?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let metrics_path = out.join("metrics_rl.jsonl");
    let mut metrics = std::fs::File::create(&metrics_path)
        .with_context(|| format!("creating {}", metrics_path.display()))?;

    let games: Vec<Game<Real>> = corpus.train.iter().map(|g| g.game.clone()).collect();
    reinforce::train(
        &mut qgen,
        &mut baseline,
        &oracle,
        &guesser,
        &games,
        &cfg.rl,
        cfg.rl_seed,
        workers,
        |row| {
            writeln!(metrics, "{}", row.to_json_line())
                .map_err(|e| guessrl::Error::io(&metrics_path, e))?;
            println!(
                "epoch {:>3}: success {:.3}, questions {:.2}, stop fraction {:.2}",
                row.epoch, row.success_rate, row.mean_questions, row.stop_token_fraction
            );
            Ok(())
        },
    )?;

    save_checkpoint(&qgen.store, &out.join("qgen_rl.json"))?;
    save_checkpoint(&baseline.store, &out.join("baseline.json"))?;
    cfg.dump(out)?;
    println!("wrote qgen_rl.json and baseline.json to {}", out.display());
    Ok(())
}

/// Runs the accuracy grid over every available question-generator stage and
/// the chosen decoders, writing the plain-text report, its CSV form, and
/// per-stage trajectory statistics under `out`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    cfg: &AppConfig,
    data: &Path,
    checkpoints: &Path,
    out: &Path,
    decoder: Option<&str>,
    beam_width: Option<usize>,
    runs: Option<usize>,
    workers: usize,
) -> Result<()> {
    cfg.validate()?;
    let corpus = load_data(cfg, data)?;
    let oracle: Oracle<Real> = Oracle::from_store(load_store(checkpoints, "oracle.json")?)?;
    let guesser: Guesser<Real> = Guesser::from_store(load_store(checkpoints, "guesser.json")?)?;
    let supervised: QGen<Real> = QGen::from_store(load_store(checkpoints, "qgen.json")?)?;
    // The fine-tuned stage joins the grid when its checkpoint exists.
    let tuned: Option<QGen<Real>> = match checkpoints.join("qgen_rl.json") {
        p if p.is_file() => Some(QGen::from_store(load_checkpoint(&p)?)?),
        _ => None,
    };
    let mut models: Vec<(String, &QGen<Real>)> = vec![("Baseline".into(), &supervised)];
    if let Some(t) = &tuned {
        models.push(("REINFORCE".into(), t));
    }

    let width = beam_width.unwrap_or(cfg.beam_width);
    let decoders: Vec<Decoder> = match decoder {
        Some(name) => vec![parse_decoder(name, width)?],
        None => vec![Decoder::Sample, Decoder::Greedy, Decoder::Beam { width }],
    };
    let eval_cfg = EvalConfig {
        n_runs: runs.unwrap_or(cfg.eval_runs),
        limits: cfg.rl.limits(),
        seed: cfg.eval_seed,
        workers,
    };

    let report = build_report(
        &models,
        &oracle,
        &guesser,
        &corpus.train,
        &corpus.test,
        &decoders,
        &eval_cfg,
    )?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join("report.txt"), &report.render_text())?;
    write_text(&out.join("report.csv"), &report.render_csv())?;
    print!("{}", report.render_text());

    // Dialogue statistics per stage, from one pass over the held-out
    // scenes: trajectory log, length/success histogram, vocabulary usage.
    let stats_decoder = match decoders.as_slice() {
        [only] => *only,
        _ => Decoder::Sample,
    };
    let test_games: Vec<Game<Real>> = corpus.test.iter().map(|g| g.game.clone()).collect();
    for (label, qgen) in &models {
        let trajs = collect_rollouts(
            *qgen,
            &oracle,
            &guesser,
            &test_games,
            stats_decoder,
            TargetMode::Stored,
            eval_cfg.limits,
            derive_seed(cfg.eval_seed, 1_000_000),
            workers,
        )?;
        let suffix = label.to_lowercase();
        let log: String =
            trajs.iter().map(|t| dump_trajectory(t, &corpus.vocab) + "\n").collect();
        write_text(&out.join(format!("trajectories_{suffix}.jsonl")), &log)?;
        write_text(
            &out.join(format!("length_success_{suffix}.csv")),
            &curve_csv(&length_success_curve(&trajs)),
        )?;
        write_text(
            &out.join(format!("vocab_usage_{suffix}.csv")),
            &vocab_usage(&trajs, &corpus.vocab)?.render_csv(),
        )?;
    }
    cfg.dump(out)?;
    Ok(())
}

/// Plays one full game on the given scene and prints the transcript:
/// every question with its answer, how the dialogue ended, and the
/// guesser's pick against the true target.
pub fn play(
    cfg: &AppConfig,
    data: &Path,
    checkpoints: &Path,
    scene_id: u64,
    decoder: &str,
) -> Result<()> {
    cfg.validate()?;
    let corpus = load_data(cfg, data)?;
    let (game, split) = find_scene(&corpus, scene_id)?;
    let oracle: Oracle<Real> = Oracle::from_store(load_store(checkpoints, "oracle.json")?)?;
    let guesser: Guesser<Real> = Guesser::from_store(load_store(checkpoints, "guesser.json")?)?;
    // Prefer the fine-tuned policy when it exists.
    let (qgen, stage): (QGen<Real>, &str) = match checkpoints.join("qgen_rl.json") {
        p if p.is_file() => (QGen::from_store(load_checkpoint(&p)?)?, "qgen_rl.json"),
        _ => (QGen::from_store(load_store(checkpoints, "qgen.json")?)?, "qgen.json"),
    };
    let decoder = parse_decoder(decoder, cfg.beam_width)?;

    let mut rng = rand_seed(derive_seed(cfg.eval_seed, scene_id));
    let traj = guessrl::mdp::rollout(
        &qgen,
        &oracle,
        &guesser,
        game,
        decoder,
        cfg.rl.limits(),
        &mut rng,
    )?;

    let target = &game.objects[game.target_index];
    println!(
        "scene {scene_id} ({split} split): {} objects, target is object {} ({})",
        game.objects.len(),
        game.target_index,
        category_name(target.category)
    );
    println!("policy: {stage}");
    for (i, pair) in traj.dialogue.pairs.iter().enumerate() {
        println!("  q{}: {} -> {}", i + 1, render_question(&pair.question, &corpus), pair.answer.as_str());
    }
    if traj.dialogue.terminated_by_stop {
        println!("  policy stopped the dialogue");
    } else {
        println!("  question cap reached");
    }
    let pick = TargetGuesser::guess(&guesser, &traj.dialogue, game)?;
    let verdict = if pick == game.target_index { "correct" } else { "wrong" };
    println!(
        "guess: object {pick} ({}) — {verdict}, reward {}",
        category_name(game.objects[pick].category),
        traj.reward
    );
    Ok(())
}

/// Renders a question's words with a plain trailing question mark.
fn render_question(tokens: &[usize], corpus: &CorpusData<Real>) -> String {
    match tokens.split_last() {
        Some((&QMARK, words)) => format!("{} ?", corpus.vocab.render(words)),
        _ => corpus.vocab.render(tokens),
    }
}

fn rand_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn load_data(cfg: &AppConfig, data: &Path) -> Result<CorpusData<Real>> {
    load_corpus(&CorpusPaths::under(data), &cfg.scene)
        .with_context(|| format!("loading corpus from {}", data.display()))
}

fn load_store(dir: &Path, name: &str) -> Result<guessrl::ParamStore> {
    let path = dir.join(name);
    if !path.is_file() {
        bail!("missing checkpoint {}", path.display());
    }
    Ok(load_checkpoint(&path)?)
}

fn save_model(
    store: &guessrl::ParamStore,
    rows: &[EpochRow],
    out: &Path,
    name: &str,
) -> Result<()> {
    save_checkpoint(store, &out.join(format!("{name}.json")))?;
    let lines: String = rows.iter().map(|r| r.to_json_line() + "\n").collect();
    write_text(&out.join(format!("metrics_{name}.jsonl")), &lines)?;
    if let Some(test) = rows.iter().rev().find(|r| r.split == "test") {
        match (test.error_rate, test.perplexity) {
            (Some(err), _) => println!("{name}: test error {:.3} (epoch {})", err, test.epoch),
            (_, Some(ppl)) => println!("{name}: test perplexity {:.3} (epoch {})", ppl, test.epoch),
            _ => println!("{name}: test loss {:.3} (epoch {})", test.loss, test.epoch),
        }
    }
    Ok(())
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Decoder from its flag value, honoring the configured beam width.
fn parse_decoder(name: &str, beam_width: usize) -> Result<Decoder> {
    Ok(match Decoder::parse(name)? {
        Decoder::Beam { .. } => Decoder::Beam { width: beam_width },
        other => other,
    })
}

fn find_scene(corpus: &CorpusData<Real>, scene_id: u64) -> Result<(&Game<Real>, &'static str)> {
    for (split, games) in
        [("train", &corpus.train), ("valid", &corpus.valid), ("test", &corpus.test)]
    {
        if let Some(g) = games.iter().find(|g: &&CorpusGame<Real>| g.game.scene_id == scene_id) {
            return Ok((&g.game, split));
        }
    }
    bail!("scene {scene_id} is not in the corpus")
}
