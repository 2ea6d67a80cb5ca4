use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, EdConfig, EvalReport};
use crate::error::{Error, Result};
use crate::generate::GenerationConfig;
use crate::model::{LossWeights, ModelConfig, Parameters};
use crate::prompt::{PreambleMode, TokenSpace};
use crate::sequence::{AnnotatedVideo, Axis};
use crate::train::{train, TrainConfig, TrainingLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationGrid {
    /// Backward observation length in {4, 8, 16, 24}.
    ObsInterval,
    /// (alpha, beta) in {(1, 0.5), (1, 0.75), (1, 1)}.
    LossWeights,
    /// Special control token vs. descriptor block.
    TokenType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub label: String,
    pub train: TrainConfig,
}

impl AblationGrid {
    pub const ALL: [AblationGrid; 3] = [
        AblationGrid::ObsInterval,
        AblationGrid::LossWeights,
        AblationGrid::TokenType,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationGrid::ObsInterval => "obs_interval",
            AblationGrid::LossWeights => "loss_weights",
            AblationGrid::TokenType => "token_type",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown grid `{s}`")))
    }

    fn key_header(self) -> &'static str {
        match self {
            AblationGrid::ObsInterval => "n_obs_bwd",
            AblationGrid::LossWeights => "loss_weights",
            AblationGrid::TokenType => "token_type",
        }
    }

    fn title(self) -> &'static str {
        match self {
            AblationGrid::ObsInterval => "Backward observation interval",
            AblationGrid::LossWeights => "Loss weights",
            AblationGrid::TokenType => "Task token type",
        }
    }

    pub fn cells(self, base: &TrainConfig) -> Vec<AblationCell> {
        match self {
            AblationGrid::ObsInterval => [4, 8, 16, 24]
                .into_iter()
                .map(|n| {
                    let mut train = *base;
                    train.window.n_obs_bwd = n;
                    AblationCell {
                        label: n.to_string(),
                        train,
                    }
                })
                .collect(),
            AblationGrid::LossWeights => [(1.0, 0.5), (1.0, 0.75), (1.0, 1.0)]
                .into_iter()
                .map(|(alpha, beta)| AblationCell {
                    label: format!("alpha={alpha} beta={beta}"),
                    train: TrainConfig {
                        weights: LossWeights { alpha, beta },
                        ..*base
                    },
                })
                .collect(),
            AblationGrid::TokenType => [PreambleMode::SpecialToken, PreambleMode::DetailedDescription]
                .into_iter()
                .map(|preamble| AblationCell {
                    label: preamble.name().to_string(),
                    train: TrainConfig { preamble, ..*base },
                })
                .collect(),
        }
    }
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub verb: Spread,
    pub noun: Spread,
    pub action: Spread,
    /// `[verb, noun, action]` mean EDs per seed.
    pub per_seed: Vec<(u64, [f64; 3])>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub grid: AblationGrid,
    pub rows: Vec<AblationRow>,
}

/// Everything a cell needs besides its training config.
pub struct AblationSetup<'a> {
    pub train_videos: &'a [AnnotatedVideo],
    pub test_videos: &'a [AnnotatedVideo],
    pub space: &'a TokenSpace,
    pub model: ModelConfig,
    pub generation: GenerationConfig,
    pub ed: EdConfig,
}

pub struct AblationRun {
    pub cell: AblationCell,
    pub seed: u64,
    pub params: Parameters,
    pub log: TrainingLog,
    pub report: EvalReport,
}

/// Trains and evaluates one model per (cell, seed). `seed` drives training,
/// initialization and sampling alike. Runs may execute in parallel; the
/// returned runs are in (cell, seed) order.
pub fn run_ablation(
    grid: AblationGrid,
    base: &TrainConfig,
    seeds: &[u64],
    setup: &AblationSetup<'_>,
) -> Result<(AblationTable, Vec<AblationRun>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one seed".into()));
    }
    let cells = grid.cells(base);
    let jobs: Vec<(AblationCell, u64)> = cells
        .iter()
        .flat_map(|c| seeds.iter().map(move |&s| (c.clone(), s)))
        .collect();
    let runs = jobs
        .into_par_iter()
        .map(|(cell, seed)| {
            let train_cfg = TrainConfig { seed, ..cell.train };
            let model = ModelConfig { seed, ..setup.model };
            let generation = GenerationConfig {
                seed,
                ..setup.generation
            };
            let (params, log) = train(setup.train_videos, setup.space, &train_cfg, &model)?;
            let report = evaluate(
                &params,
                setup.space,
                setup.test_videos,
                &train_cfg.window,
                &generation,
                &setup.ed,
                train_cfg.preamble,
            )?;
            Ok(AblationRun {
                cell,
                seed,
                params,
                log,
                report,
            })
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let rows = cells
        .iter()
        .map(|cell| {
            let per_seed: Vec<(u64, [f64; 3])> = runs
                .iter()
                .filter(|r| r.cell.label == cell.label)
                .map(|r| (r.seed, Axis::ALL.map(|a| r.report.mean(a))))
                .collect();
            let column = |i: usize| Spread::of(&per_seed.iter().map(|(_, v)| v[i]).collect::<Vec<_>>());
            AblationRow {
                label: cell.label.clone(),
                verb: column(0),
                noun: column(1),
                action: column(2),
                per_seed,
            }
        })
        .collect();
    Ok((AblationTable { grid, rows }, runs))
}

impl AblationTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let err = |e: csv::Error| Error::Parse(e.to_string());
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            self.grid.key_header(),
            "verb_mean",
            "verb_std",
            "noun_mean",
            "noun_std",
            "action_mean",
            "action_std",
            "seeds",
        ])
        .map_err(err)?;
        for r in &self.rows {
            wtr.write_record([
                r.label.clone(),
                format!("{:.4}", r.verb.mean),
                format!("{:.4}", r.verb.std),
                format!("{:.4}", r.noun.mean),
                format!("{:.4}", r.noun.std),
                format!("{:.4}", r.action.mean),
                format!("{:.4}", r.action.std),
                r.per_seed.len().to_string(),
            ])
            .map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::Parse(e.to_string()))
    }

    /// Aligned plain-text table, lower is better on every column.
    pub fn render_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain([self.grid.title().len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>15}  {:>15}  {:>15}",
            self.grid.title(),
            "verb",
            "noun",
            "action"
        );
        let _ = writeln!(out, "{}", "-".repeat(width + 51));
        let cell = |s: &Spread| format!("{:.4} ± {:.4}", s.mean, s.std);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>15}  {:>15}  {:>15}",
                r.label,
                cell(&r.verb),
                cell(&r.noun),
                cell(&r.action)
            );
        }
        out
    }
}
