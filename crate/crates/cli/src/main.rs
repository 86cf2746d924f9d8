//! `guessrl`: drives the full guessing-game pipeline — corpus generation,
//! supervised pretraining, policy-gradient fine-tuning, evaluation reports,
//! and single-game inspection — over one shared plain-text config.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::AppConfig;

#[derive(Parser)]
#[command(name = "guessrl", version, about = "Guessing-game dialogue pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus: scenes, scripted dialogues, vocabulary.
    GenData {
        /// Config file; built-in defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the dataset files.
        #[arg(long)]
        out: PathBuf,
        /// Corpus seed; shorthand for --set scene.seed=N.
        #[arg(long)]
        seed: Option<u64>,
        /// Config override, section.key=value; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train the answerer, guesser, and question generator on the corpus.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding the generated dataset.
        #[arg(long)]
        data: PathBuf,
        /// Directory for checkpoints and metrics.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Fine-tune the question generator with policy gradients.
    RlTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding the pretrained checkpoints.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rollout worker threads; any value gives identical results.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Measure success rates and write the accuracy report.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding oracle/guesser/qgen checkpoints (and
        /// optionally the fine-tuned qgen_rl).
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// sampling, greedy, or beam; all three when omitted.
        #[arg(long)]
        decoder: Option<String>,
        #[arg(long)]
        beam_width: Option<usize>,
        /// Evaluation runs per report cell.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Play one scene and print the full transcript.
    Play {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        /// Scene to play, as stored in the corpus.
        #[arg(long)]
        scene_id: u64,
        #[arg(long, default_value = "greedy")]
        decoder: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { config, out, seed, set } => {
            let mut cfg = load(config, &set)?;
            if let Some(seed) = seed {
                cfg.data_seed = seed;
            }
            commands::gen_data(&cfg, &out)
        }
        Command::Pretrain { config, data, out, set } => {
            let cfg = load(config, &set)?;
            commands::pretrain(&cfg, &data, &out)
        }
        Command::RlTrain { config, data, checkpoints, out, workers, set } => {
            let cfg = load(config, &set)?;
            commands::rl_train(&cfg, &data, &checkpoints, &out, workers)
        }
        Command::Evaluate {
            config,
            data,
            checkpoints,
            out,
            decoder,
            beam_width,
            runs,
            workers,
            set,
        } => {
            let cfg = load(config, &set)?;
            commands::evaluate(
                &cfg,
                &data,
                &checkpoints,
                &out,
                decoder.as_deref(),
                beam_width,
                runs,
                workers,
            )
        }
        Command::Play { config, data, checkpoints, scene_id, decoder, set } => {
            let cfg = load(config, &set)?;
            commands::play(&cfg, &data, &checkpoints, scene_id, &decoder)
        }
    }
}

fn load(config: Option<PathBuf>, set: &[String]) -> anyhow::Result<AppConfig> {
    let mut cfg = AppConfig::load(config.as_deref())?;
    cfg.apply_overrides(set)?;
    Ok(cfg)
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
