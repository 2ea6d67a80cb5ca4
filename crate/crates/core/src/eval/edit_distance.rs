use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{project, Axis};
use crate::vocab::ActionLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Divide by the reference length.
    ByZ,
    ByMaxLen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdConfig {
    /// Count swapping two adjacent symbols as one edit (optimal string alignment).
    pub allow_transpositions: bool,
    pub normalizer: Normalizer,
}

impl Default for EdConfig {
    fn default() -> Self {
        Self {
            allow_transpositions: false,
            normalizer: Normalizer::ByZ,
        }
    }
}

/// Levenshtein distance (or optimal string alignment distance when
/// transpositions are enabled), computed with rolling DP rows.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T], cfg: &EdConfig) -> usize {
    let m = b.len();
    if a.is_empty() {
        return m;
    }
    if m == 0 {
        return a.len();
    }
    let mut prev2 = vec![0usize; m + 1];
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut best = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
            if cfg.allow_transpositions && i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                best = best.min(prev2[j - 2] + 1);
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev2, &mut prev);
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Edit distance between the `axis` projections, divided by the configured normalizer.
pub fn normalized_ed(
    pred: &[ActionLabel],
    gt: &[ActionLabel],
    axis: Axis,
    num_nouns: usize,
    cfg: &EdConfig,
) -> Result<f64> {
    let denom = match cfg.normalizer {
        Normalizer::ByZ => gt.len(),
        Normalizer::ByMaxLen => pred.len().max(gt.len()),
    };
    if gt.is_empty() || denom == 0 {
        return Err(Error::EmptyReference);
    }
    let d = edit_distance(&project(pred, axis, num_nouns), &project(gt, axis, num_nouns), cfg);
    Ok(d as f64 / denom as f64)
}
