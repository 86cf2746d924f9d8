//! The shared plain-text configuration: five `key = value` sections mapping
//! onto the library's config structs, with defaults, file parsing that
//! reports every bad entry at once, command-line overrides, and a dump that
//! parses back to the same configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use guessrl::models::ModelConfig;
use guessrl::reinforce::RlConfig;
use guessrl::scenes::SceneConfig;
use guessrl::supervised::TrainConfig;

const SECTIONS: [&str; 5] = ["scene", "model", "supervised", "rl", "eval"];

/// Every tunable of the pipeline; `section.key` names match the dump.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    /// World shape (`[scene]`).
    pub scene: SceneConfig,
    /// Scenes produced by `gen-data` (`scene.n_scenes`).
    pub n_scenes: usize,
    /// Scripted-questioner question cap during data generation
    /// (`scene.max_questions`).
    pub max_questions: usize,
    /// Corpus generation seed (`scene.seed`).
    pub data_seed: u64,
    /// Token embedding width (`model.embed_dim`).
    pub embed_dim: usize,
    /// Category embedding width (`model.cat_dim`).
    pub cat_dim: usize,
    /// Recurrent state width (`model.hidden_dim`).
    pub hidden_dim: usize,
    /// Reward-baseline hidden width (`model.baseline_hidden`).
    pub baseline_hidden: usize,
    /// Supervised phase (`[supervised]`).
    pub supervised: TrainConfig,
    pub supervised_seed: u64,
    /// Fine-tuning phase (`[rl]`), including the dialogue limits shared
    /// with evaluation.
    pub rl: RlConfig,
    pub rl_seed: u64,
    /// Evaluation runs per report cell (`eval.runs`).
    pub eval_runs: usize,
    pub eval_seed: u64,
    /// Default beam width for beam decoding (`eval.beam_width`).
    pub beam_width: usize,
}

impl Default for AppConfig {
    fn default() -> AppConfig {
        let model = ModelConfig::default();
        AppConfig {
            scene: SceneConfig::default(),
            n_scenes: 5000,
            max_questions: 8,
            data_seed: 0,
            embed_dim: model.embed_dim,
            cat_dim: model.cat_dim,
            hidden_dim: model.hidden_dim,
            baseline_hidden: model.baseline_hidden,
            supervised: TrainConfig::default(),
            supervised_seed: 1,
            rl: RlConfig::default(),
            rl_seed: 2,
            eval_runs: 5,
            eval_seed: 3,
            beam_width: 5,
        }
    }
}

impl AppConfig {
    /// Defaults, overlaid with a config file when one is given.
    pub fn load(path: Option<&Path>) -> Result<AppConfig> {
        let mut cfg = AppConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            fail_on(cfg.apply_text(&text), &format!("config {}", path.display()))?;
        }
        Ok(cfg)
    }

    /// Applies `section.key=value` items from `--set` flags.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        let mut problems = Vec::new();
        for item in sets {
            match split_override(item) {
                Some((section, key, value)) => {
                    if let Err(e) = self.set(section, key, value) {
                        problems.push(format!("--set {item}: {e}"));
                    }
                }
                None => problems.push(format!("--set {item}: expected section.key=value")),
            }
        }
        fail_on(problems, "command-line overrides")
    }

    /// Model dims; the feature width always follows the scene features.
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            cat_dim: self.cat_dim,
            hidden_dim: self.hidden_dim,
            feature_dim: self.scene.feature_dim,
            baseline_hidden: self.baseline_hidden,
        }
    }

    /// Checks every section, reporting all problems together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for result in [
            self.scene.validate(),
            self.model().validate(),
            self.supervised.validate(),
            self.rl.validate(),
        ] {
            if let Err(e) = result {
                problems.push(e.to_string());
            }
        }
        if self.n_scenes < 10 {
            problems.push(format!(
                "scene.n_scenes must be at least 10 to fill all three splits, got {}",
                self.n_scenes
            ));
        }
        if self.max_questions == 0 {
            problems.push("scene.max_questions must be at least 1".into());
        }
        if self.eval_runs == 0 {
            problems.push("eval.runs must be at least 1".into());
        }
        if self.beam_width == 0 {
            problems.push("eval.beam_width must be at least 1".into());
        }
        fail_on(problems, "configuration")
    }

    /// Parses one file body, returning every problem found.
    fn apply_text(&mut self, text: &str) -> Vec<String> {
        let mut problems = Vec::new();
        let mut section = String::new();
        let mut section_ok = false;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = strip_comment(raw).trim().to_string();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                section_ok = SECTIONS.contains(&section.as_str());
                if !section_ok {
                    problems.push(format!("line {lineno}: unknown section [{section}]"));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {lineno}: expected key = value, got '{line}'"));
                continue;
            };
            if !section_ok {
                // The bad section was already reported once.
                continue;
            }
            if let Err(e) = self.set(&section, key.trim(), value.trim()) {
                problems.push(format!("line {lineno}: {e}"));
            }
        }
        problems
    }

    /// Sets one key; errors name the key and the offending value.
    fn set(&mut self, section: &str, key: &str, value: &str) -> std::result::Result<(), String> {
        match (section, key) {
            ("scene", "n_categories") => self.scene.n_categories = num(section, key, value)?,
            ("scene", "k_min") => self.scene.k_min = num(section, key, value)?,
            ("scene", "k_max") => self.scene.k_max = num(section, key, value)?,
            ("scene", "width") => self.scene.width = num(section, key, value)?,
            ("scene", "height") => self.scene.height = num(section, key, value)?,
            ("scene", "feature_dim") => self.scene.feature_dim = num(section, key, value)?,
            ("scene", "n_scenes") => self.n_scenes = num(section, key, value)?,
            ("scene", "max_questions") => self.max_questions = num(section, key, value)?,
            ("scene", "seed") => self.data_seed = num(section, key, value)?,
            ("model", "embed_dim") => self.embed_dim = num(section, key, value)?,
            ("model", "cat_dim") => self.cat_dim = num(section, key, value)?,
            ("model", "hidden_dim") => self.hidden_dim = num(section, key, value)?,
            ("model", "baseline_hidden") => self.baseline_hidden = num(section, key, value)?,
            ("supervised", "lr") => self.supervised.lr = num(section, key, value)?,
            ("supervised", "batch") => self.supervised.batch = num(section, key, value)?,
            ("supervised", "epochs") => self.supervised.epochs = num(section, key, value)?,
            ("supervised", "plateau_halving") => {
                self.supervised.plateau_halving = num(section, key, value)?
            }
            ("supervised", "seed") => self.supervised_seed = num(section, key, value)?,
            ("rl", "lr_policy") => self.rl.lr_policy = num(section, key, value)?,
            ("rl", "lr_baseline") => self.rl.lr_baseline = num(section, key, value)?,
            ("rl", "batch") => self.rl.batch = num(section, key, value)?,
            ("rl", "epochs") => self.rl.epochs = num(section, key, value)?,
            ("rl", "gamma") => self.rl.gamma = num(section, key, value)?,
            ("rl", "j_max") => self.rl.j_max = num(section, key, value)?,
            ("rl", "i_max") => self.rl.i_max = num(section, key, value)?,
            ("rl", "seed") => self.rl_seed = num(section, key, value)?,
            ("eval", "runs") => self.eval_runs = num(section, key, value)?,
            ("eval", "seed") => self.eval_seed = num(section, key, value)?,
            ("eval", "beam_width") => self.beam_width = num(section, key, value)?,
            _ if SECTIONS.contains(&section) => return Err(format!("unknown key {section}.{key}")),
            ("", _) => return Err(format!("key {key} appears before any [section]")),
            _ => return Err(format!("unknown section [{section}]")),
        }
        Ok(())
    }

    /// Dump that [`AppConfig::load`] parses back to the same configuration.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[scene]");
        let _ = writeln!(out, "n_categories = {}", self.scene.n_categories);
        let _ = writeln!(out, "k_min = {}", self.scene.k_min);
        let _ = writeln!(out, "k_max = {}", self.scene.k_max);
        let _ = writeln!(out, "width = {}", self.scene.width);
        let _ = writeln!(out, "height = {}", self.scene.height);
        let _ = writeln!(out, "feature_dim = {}", self.scene.feature_dim);
        let _ = writeln!(out, "n_scenes = {}", self.n_scenes);
        let _ = writeln!(out, "max_questions = {}", self.max_questions);
        let _ = writeln!(out, "seed = {}", self.data_seed);
        let _ = writeln!(out, "\n[model]");
        let _ = writeln!(out, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(out, "cat_dim = {}", self.cat_dim);
        let _ = writeln!(out, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(out, "baseline_hidden = {}", self.baseline_hidden);
        let _ = writeln!(out, "\n[supervised]");
        let _ = writeln!(out, "lr = {}", self.supervised.lr);
        let _ = writeln!(out, "batch = {}", self.supervised.batch);
        let _ = writeln!(out, "epochs = {}", self.supervised.epochs);
        let _ = writeln!(out, "plateau_halving = {}", self.supervised.plateau_halving);
        let _ = writeln!(out, "seed = {}", self.supervised_seed);
        let _ = writeln!(out, "\n[rl]");
        let _ = writeln!(out, "lr_policy = {}", self.rl.lr_policy);
        let _ = writeln!(out, "lr_baseline = {}", self.rl.lr_baseline);
        let _ = writeln!(out, "batch = {}", self.rl.batch);
        let _ = writeln!(out, "epochs = {}", self.rl.epochs);
        let _ = writeln!(out, "gamma = {}", self.rl.gamma);
        let _ = writeln!(out, "j_max = {}", self.rl.j_max);
        let _ = writeln!(out, "i_max = {}", self.rl.i_max);
        let _ = writeln!(out, "seed = {}", self.rl_seed);
        let _ = writeln!(out, "\n[eval]");
        let _ = writeln!(out, "runs = {}", self.eval_runs);
        let _ = writeln!(out, "seed = {}", self.eval_seed);
        let _ = writeln!(out, "beam_width = {}", self.beam_width);
        out
    }

    /// Writes the effective config next to a command's outputs.
    pub fn dump(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("config.ini");
        std::fs::write(&path, self.render())
            .with_context(|| format!("writing {}", path.display()))
    }
}

fn num<T: FromStr>(section: &str, key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("{section}.{key}: invalid value '{value}': {e}"))
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn split_override(item: &str) -> Option<(&str, &str, &str)> {
    let (path, value) = item.split_once('=')?;
    let (section, key) = path.trim().split_once('.')?;
    Some((section.trim(), key.trim(), value.trim()))
}

fn fail_on(problems: Vec<String>, what: &str) -> Result<()> {
    match problems.len() {
        0 => Ok(()),
        n => bail!("{n} invalid entr{} in {what}:\n  {}", if n == 1 { "y" } else { "ies" }, problems.join("\n  ")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut cfg = AppConfig::default();
        cfg.scene.k_min = 2;
        cfg.rl.lr_policy = 0.0025;
        cfg.supervised.plateau_halving = false;
        cfg.eval_runs = 3;
        let mut reparsed = AppConfig::default();
        let problems = reparsed.apply_text(&cfg.render());
        assert!(problems.is_empty(), "{problems:?}");
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn every_problem_is_reported_at_once() {
        let text = "\
[scene]
k_min = banana
bogus_key = 1

[nonsense]
whatever = 2

[rl]
gamma = fast
";
        let mut cfg = AppConfig::default();
        let problems = cfg.apply_text(text);
        let joined = problems.join("\n");
        assert_eq!(problems.len(), 4, "{joined}");
        assert!(joined.contains("scene.k_min"), "{joined}");
        assert!(joined.contains("scene.bogus_key"), "{joined}");
        assert!(joined.contains("unknown section [nonsense]"), "{joined}");
        assert!(joined.contains("rl.gamma"), "{joined}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "\
# a comment
[scene]
k_min = 4   # inline comment
k_max = 5   ; other comment style

[eval]
runs = 2
";
        let mut cfg = AppConfig::default();
        let problems = cfg.apply_text(text);
        assert!(problems.is_empty(), "{problems:?}");
        assert_eq!(cfg.scene.k_min, 4);
        assert_eq!(cfg.scene.k_max, 5);
        assert_eq!(cfg.eval_runs, 2);
    }

    #[test]
    fn overrides_apply_and_report_bad_items() {
        let mut cfg = AppConfig::default();
        cfg.apply_overrides(&["rl.epochs=3".into(), "scene.n_scenes=200".into()]).unwrap();
        assert_eq!(cfg.rl.epochs, 3);
        assert_eq!(cfg.n_scenes, 200);

        let err = cfg
            .apply_overrides(&["rl.epochs".into(), "scene.nope=1".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("rl.epochs"), "{err}");
        assert!(err.contains("scene.nope"), "{err}");
    }

    #[test]
    fn validate_collects_cross_section_problems() {
        let mut cfg = AppConfig::default();
        cfg.scene.k_min = 1; // scenes need at least two objects
        cfg.eval_runs = 0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("k_min"), "{err}");
        assert!(err.contains("eval.runs"), "{err}");
    }
}
