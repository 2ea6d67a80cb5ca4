use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use biant_core::data::ScenarioConfig;
use biant_core::eval::EdConfig;
use biant_core::generate::GenerationConfig;
use biant_core::model::{LossWeights, ModelConfig};
use biant_core::prompt::{PreambleMode, TokenSpace};
use biant_core::train::TrainConfig;
use biant_core::vocab::Vocabulary;
use biant_core::Error;
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub seeds: Vec<u64>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
        }
    }
}

/// Everything a run needs, loadable from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Vocabulary file; the built-in kitchen vocabulary when absent.
    pub vocab: Option<PathBuf>,
    /// Corpus directory; `<out_dir>/data` when absent.
    pub data_dir: Option<PathBuf>,
    pub data: ScenarioConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
    pub ed: EdConfig,
    pub ablation: AblationSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            vocab: None,
            data_dir: None,
            data: ScenarioConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            generation: GenerationConfig::default(),
            ed: EdConfig::default(),
            ablation: AblationSettings::default(),
        }
    }
}

/// Flags shared by every subcommand; each overrides the matching config field.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run config; unspecified fields keep their defaults
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for initialization, batch order and sampling
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Seed of the synthetic corpus generator
    #[arg(long, value_name = "N")]
    pub data_seed: Option<u64>,
    /// Forward loss weight
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Backward loss weight; 0 disables backward training
    #[arg(long, value_name = "F", allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Length of the reversed observation interval
    #[arg(long, value_name = "N")]
    pub n_obs_bwd: Option<usize>,
    /// Task preamble
    #[arg(long, value_name = "MODE", value_parser = ["special", "description"])]
    pub preamble: Option<String>,
    /// Candidates per test instance
    #[arg(long, value_name = "N")]
    pub k: Option<usize>,
    /// Training epochs
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())).into())
    }

    pub fn resolve(o: &Overrides) -> anyhow::Result<Self> {
        let mut cfg = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(out) = &o.out {
            cfg.out_dir = out.clone();
        }
        if let Some(s) = o.seed {
            cfg.train.seed = s;
            cfg.model.seed = s;
            cfg.generation.seed = s;
        }
        if let Some(s) = o.data_seed {
            cfg.data.seed = s;
        }
        let alpha = o.alpha.unwrap_or(cfg.train.weights.alpha);
        let beta = o.beta.unwrap_or(cfg.train.weights.beta);
        cfg.train.weights = LossWeights { alpha, beta };
        if let Some(n) = o.n_obs_bwd {
            cfg.train.window.n_obs_bwd = n;
        }
        if let Some(p) = &o.preamble {
            cfg.train.preamble = PreambleMode::parse(p)?;
        }
        if let Some(k) = o.k {
            cfg.generation.k = k;
        }
        if let Some(e) = o.epochs {
            cfg.train.epochs = e;
        }
        Ok(cfg)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn load_vocab(&self) -> anyhow::Result<Vocabulary> {
        Ok(match &self.vocab {
            Some(p) => Vocabulary::load(p)?,
            None => Vocabulary::demo(),
        })
    }

    /// Checks component invariants and pins the model vocabulary to the token space.
    pub fn finalize(&mut self, vocab: &Vocabulary) -> anyhow::Result<TokenSpace> {
        self.train.validate()?;
        self.generation.validate()?;
        self.data.validate(self.train.window.window_len())?;
        let space = TokenSpace::new(vocab, self.model.context_len);
        self.model.vocab_size = space.size();
        self.model.validate()?;
        let w = &self.train.window;
        let longest = space
            .encoded_len(self.train.preamble, w.n_obs_fwd, w.z_fwd)
            .max(space.encoded_len(self.train.preamble, w.n_obs_bwd, w.z_bwd()));
        if longest > self.model.context_len {
            return Err(Error::InvalidConfig(format!(
                "context_len {} too short for {longest}-token instances",
                self.model.context_len
            ))
            .into());
        }
        Ok(space)
    }

    /// Writes the fully resolved config into the run directory.
    pub fn echo(&self, dir: &Path, name: &str) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::Io { path, source: e })?;
        Ok(())
    }
}
