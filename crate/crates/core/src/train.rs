//! Joint forward/backward training loop.

use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{gradient, init_params, optimizer_step, AdamState, LossWeights, ModelConfig, Parameters};
use crate::prompt::{encode_instance_with, EncodedInstance, PreambleMode, TokenSpace};
use crate::seed;
use crate::sequence::{corrupt_labels, make_backward_instance, make_forward_instances, AnnotatedVideo, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub window: WindowConfig,
    pub weights: LossWeights,
    pub preamble: PreambleMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Probability of replacing an observed label with a random one.
    pub label_noise: f64,
    /// Charge SEP/EOS target positions in the loss.
    pub loss_on_structure: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            weights: LossWeights::default(),
            preamble: PreambleMode::SpecialToken,
            epochs: 20,
            batch_size: 32,
            lr: 3e-3,
            seed: 0,
            label_noise: 0.0,
            loss_on_structure: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::InvalidConfig(format!(
                "label_noise must lie in [0, 1], got {}",
                self.label_noise
            )));
        }
        Ok(())
    }
}

/// Encodes every forward window and, when `beta > 0`, its reversed twin
/// immediately after it. Label noise touches observed intervals only.
pub fn build_training_set(
    videos: &[AnnotatedVideo],
    cfg: &TrainConfig,
    space: &TokenSpace,
) -> Result<Vec<EncodedInstance>> {
    let with_backward = cfg.weights.beta > 0.0;
    let mut out = Vec::new();
    for (vi, video) in videos.iter().enumerate() {
        for (wi, fwd) in make_forward_instances(video, &cfg.window).into_iter().enumerate() {
            let bwd = if with_backward {
                Some(make_backward_instance(&fwd, cfg.window.n_obs_bwd)?)
            } else {
                None
            };
            for (di, mut inst) in std::iter::once(fwd).chain(bwd).enumerate() {
                if cfg.label_noise > 0.0 {
                    let mut rng = seed::stream(cfg.seed, &[0x006e_6f69_7365, vi as u64, wi as u64, di as u64]);
                    corrupt_labels(
                        &mut inst.observed,
                        space.num_verbs,
                        space.num_nouns,
                        cfg.label_noise,
                        &mut rng,
                    );
                }
                out.push(encode_instance_with(space, &inst, cfg.preamble, cfg.loss_on_structure)?);
            }
        }
    }
    Ok(out)
}

/// Visit order of the training set in a given epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed, &[0x7368_7566, epoch as u64]));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Summed weighted loss over the epoch divided by the number of forward
    /// windows, i.e. the mean per-window joint objective.
    pub mean_loss: f64,
    pub mean_loss_fwd: f64,
    pub mean_loss_bwd: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for e in &self.epochs {
            wtr.serialize(e).map_err(|e| Error::Parse(e.to_string()))?;
        }
        wtr.flush().map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let epochs = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<EpochLog>, _>>()
            .map_err(|e| Error::Parse(format!("training log: {e}")))?;
        Ok(Self { epochs })
    }

    pub fn first(&self) -> Option<&EpochLog> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

/// Runs the optimizer over a prepared training set.
pub fn train_encoded(
    set: &[EncodedInstance],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<(Parameters, TrainingLog)> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut params = init_params(model_cfg)?;
    let mut opt = AdamState::new(&params);
    let mut log = TrainingLog::default();
    let n_windows = set
        .iter()
        .filter(|e| e.direction == crate::sequence::Direction::Forward)
        .count()
        .max(1);
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let order = epoch_order(set.len(), cfg.seed, epoch);
        let (mut sum_f, mut sum_b, mut n_f, mut n_b) = (0.0, 0.0, 0usize, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<EncodedInstance> = idx.iter().map(|&i| set[i].clone()).collect();
            let (grads, stats) = gradient(&params, &batch, cfg.weights).map_err(|e| match e {
                Error::NumericalDivergence { .. } => Error::NumericalDivergence { epoch, batch: b },
                other => other,
            })?;
            optimizer_step(&mut params, &grads, &mut opt, cfg.lr);
            if !params.all_finite() {
                return Err(Error::NumericalDivergence { epoch, batch: b });
            }
            sum_f += stats.sum_fwd;
            sum_b += stats.sum_bwd;
            n_f += stats.n_fwd;
            n_b += stats.n_bwd;
        }
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: (cfg.weights.alpha * sum_f + cfg.weights.beta * sum_b) / n_windows as f64,
            mean_loss_fwd: mean(sum_f, n_f),
            mean_loss_bwd: mean(sum_b, n_b),
            wallclock_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok((params, log))
}

pub fn train(
    videos: &[AnnotatedVideo],
    space: &TokenSpace,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<(Parameters, TrainingLog)> {
    cfg.validate()?;
    if model_cfg.vocab_size != space.size() {
        return Err(Error::InvalidConfig(format!(
            "model vocab_size {} does not match token space size {}",
            model_cfg.vocab_size,
            space.size()
        )));
    }
    let set = build_training_set(videos, cfg, space)?;
    if set.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no training windows: videos shorter than {} segments",
            cfg.window.window_len()
        )));
    }
    train_encoded(&set, cfg, model_cfg)
}
