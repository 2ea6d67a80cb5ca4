//! Minimum-over-K normalized edit distance evaluation and the ablation harness.

mod ablation;
mod edit_distance;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{generate_candidates, CandidateSet, GenerationConfig};
use crate::model::Parameters;
use crate::prompt::{PreambleMode, TokenSpace};
use crate::sequence::{make_forward_instances, AnnotatedVideo, AnticipationInstance, Axis, WindowConfig};
use crate::vocab::ActionLabel;

pub use ablation::{run_ablation, AblationCell, AblationGrid, AblationRow, AblationSetup, AblationTable, Spread};
pub use edit_distance::{edit_distance, normalized_ed, EdConfig, Normalizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisScores {
    pub ed_verb: f64,
    pub ed_noun: f64,
    pub ed_action: f64,
    pub best_verb: usize,
    pub best_noun: usize,
    pub best_action: usize,
}

impl AxisScores {
    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Verb => self.ed_verb,
            Axis::Noun => self.ed_noun,
            Axis::Action => self.ed_action,
        }
    }
}

/// Per-axis minimum over candidates; each axis picks its own best candidate.
pub fn score_instance(
    cands: &CandidateSet,
    gt: &[ActionLabel],
    num_nouns: usize,
    cfg: &EdConfig,
) -> Result<AxisScores> {
    if cands.candidates.is_empty() {
        return Err(Error::InvalidConfig(format!("no candidates for {}", cands.instance_id)));
    }
    let mut best = [(f64::INFINITY, 0usize); 3];
    for (i, cand) in cands.candidates.iter().enumerate() {
        for (slot, axis) in best.iter_mut().zip(Axis::ALL) {
            let ed = normalized_ed(cand, gt, axis, num_nouns, cfg)?;
            if ed < slot.0 {
                *slot = (ed, i);
            }
        }
    }
    Ok(AxisScores {
        ed_verb: best[0].0,
        ed_noun: best[1].0,
        ed_action: best[2].0,
        best_verb: best[0].1,
        best_noun: best[1].1,
        best_action: best[2].1,
    })
}

/// Anything that can propose candidate futures for a forward instance.
pub trait CandidateSource: Sync {
    fn candidates(&self, inst: &AnticipationInstance) -> Result<CandidateSet>;
}

/// The trained model, decoding forward-only.
pub struct ModelPredictor<'a> {
    pub params: &'a Parameters,
    pub space: &'a TokenSpace,
    pub generation: GenerationConfig,
    pub preamble: PreambleMode,
}

impl CandidateSource for ModelPredictor<'_> {
    fn candidates(&self, inst: &AnticipationInstance) -> Result<CandidateSet> {
        generate_candidates(
            self.params,
            self.space,
            &inst.observed,
            inst.future.len(),
            &self.generation,
            self.preamble,
            &inst.id(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    #[serde(flatten)]
    pub scores: AxisScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub window: WindowConfig,
    pub generation: GenerationConfig,
    pub ed: EdConfig,
    pub preamble: PreambleMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_instances: usize,
    pub mean_ed_verb: f64,
    pub mean_ed_noun: f64,
    pub mean_ed_action: f64,
    pub config: EvalSnapshot,
    pub records: Vec<InstanceRecord>,
}

impl EvalReport {
    pub fn mean(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Verb => self.mean_ed_verb,
            Axis::Noun => self.mean_ed_noun,
            Axis::Action => self.mean_ed_action,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// One-row summary: `num_instances,ed_verb,ed_noun,ed_action`.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Parse(e.to_string());
        wtr.write_record(["num_instances", "ed_verb", "ed_noun", "ed_action"])
            .map_err(err)?;
        wtr.write_record([
            self.num_instances.to_string(),
            self.mean_ed_verb.to_string(),
            self.mean_ed_noun.to_string(),
            self.mean_ed_action.to_string(),
        ])
        .map_err(err)?;
        wtr.flush().map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Forward test instances over all videos, in video order.
pub fn test_instances(videos: &[AnnotatedVideo], window: &WindowConfig) -> Vec<AnticipationInstance> {
    videos.iter().flat_map(|v| make_forward_instances(v, window)).collect()
}

/// Scores every instance and aggregates unweighted means in instance-id order.
/// Also returns the candidate sets in the same order.
pub fn evaluate_with<S: CandidateSource>(
    source: &S,
    instances: &[AnticipationInstance],
    num_nouns: usize,
    ed: &EdConfig,
    snapshot: EvalSnapshot,
) -> Result<(EvalReport, Vec<CandidateSet>)> {
    if instances.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let scored: Vec<Result<(InstanceRecord, CandidateSet)>> = instances
        .par_iter()
        .map(|inst| {
            let cands = source.candidates(inst)?;
            let scores = score_instance(&cands, &inst.future, num_nouns, ed)?;
            Ok((
                InstanceRecord {
                    instance_id: inst.id(),
                    scores,
                },
                cands,
            ))
        })
        .collect();
    let mut pairs = scored.into_iter().collect::<Result<Vec<_>>>()?;
    pairs.sort_by(|a, b| a.0.instance_id.cmp(&b.0.instance_id));
    let (records, sets): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let n = records.len() as f64;
    let mean = |axis: Axis| records.iter().map(|r| r.scores.get(axis)).sum::<f64>() / n;
    Ok((
        EvalReport {
            num_instances: records.len(),
            mean_ed_verb: mean(Axis::Verb),
            mean_ed_noun: mean(Axis::Noun),
            mean_ed_action: mean(Axis::Action),
            config: snapshot,
            records,
        },
        sets,
    ))
}

pub fn evaluate(
    params: &Parameters,
    space: &TokenSpace,
    test_videos: &[AnnotatedVideo],
    window: &WindowConfig,
    generation: &GenerationConfig,
    ed: &EdConfig,
    mode: PreambleMode,
) -> Result<EvalReport> {
    evaluate_detailed(params, space, test_videos, window, generation, ed, mode).map(|(r, _)| r)
}

/// [`evaluate`], also returning the generated candidates.
pub fn evaluate_detailed(
    params: &Parameters,
    space: &TokenSpace,
    test_videos: &[AnnotatedVideo],
    window: &WindowConfig,
    generation: &GenerationConfig,
    ed: &EdConfig,
    mode: PreambleMode,
) -> Result<(EvalReport, Vec<CandidateSet>)> {
    generation.validate()?;
    let predictor = ModelPredictor {
        params,
        space,
        generation: *generation,
        preamble: mode,
    };
    let snapshot = EvalSnapshot {
        window: *window,
        generation: *generation,
        ed: *ed,
        preamble: mode,
    };
    evaluate_with(
        &predictor,
        &test_instances(test_videos, window),
        space.num_nouns,
        ed,
        snapshot,
    )
}
