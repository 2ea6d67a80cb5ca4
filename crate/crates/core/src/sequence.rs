//! Forward anticipation windows and their reversed (backward) counterparts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{ActionLabel, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedVideo {
    pub id: String,
    pub segments: Vec<ActionLabel>,
}

impl AnnotatedVideo {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidConfig(format!("video `{}` has no segments", self.id)));
        }
        for (i, a) in self.segments.iter().enumerate() {
            if !vocab.contains(*a) {
                return Err(Error::UnknownLabel(format!("video `{}` segment {i}: {a}", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnticipationInstance {
    pub direction: Direction,
    pub observed: Vec<ActionLabel>,
    pub future: Vec<ActionLabel>,
    pub source_video: String,
    /// Segment index of the last observed action, in forward (chronological) sense.
    pub stop_index: usize,
}

impl AnticipationInstance {
    /// Stable identifier, e.g. `vid-0003@T0012`. Sorts by video then stopping time.
    pub fn id(&self) -> String {
        format!("{}@T{:04}", self.source_video, self.stop_index)
    }

    pub fn window(&self) -> Vec<ActionLabel> {
        let mut w = self.observed.clone();
        w.extend_from_slice(&self.future);
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub n_obs_fwd: usize,
    pub z_fwd: usize,
    pub n_obs_bwd: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            n_obs_fwd: 8,
            z_fwd: 20,
            n_obs_bwd: 16,
            stride: 1,
        }
    }
}

impl WindowConfig {
    pub fn window_len(&self) -> usize {
        self.n_obs_fwd + self.z_fwd
    }

    /// Length of the reversed future interval.
    pub fn z_bwd(&self) -> usize {
        self.window_len().saturating_sub(self.n_obs_bwd)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs_fwd == 0 || self.z_fwd == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(
                "n_obs_fwd, z_fwd and stride must be positive".into(),
            ));
        }
        let max = self.window_len() - 1;
        if self.n_obs_bwd == 0 || self.n_obs_bwd > max {
            return Err(Error::InvalidBackwardSplit {
                n_obs_bwd: self.n_obs_bwd,
                max,
            });
        }
        Ok(())
    }

    /// Number of forward windows in a video of `n` segments.
    pub fn num_windows(&self, n: usize) -> usize {
        if n < self.window_len() {
            0
        } else {
            (n - self.window_len()) / self.stride + 1
        }
    }
}

/// One forward instance per stopping time `T`, sliding by `cfg.stride`.
/// Videos shorter than one window yield nothing.
pub fn make_forward_instances(video: &AnnotatedVideo, cfg: &WindowConfig) -> Vec<AnticipationInstance> {
    let count = cfg.num_windows(video.segments.len());
    (0..count)
        .map(|w| {
            let start = w * cfg.stride;
            let stop = start + cfg.n_obs_fwd - 1;
            AnticipationInstance {
                direction: Direction::Forward,
                observed: video.segments[start..=stop].to_vec(),
                future: video.segments[stop + 1..stop + 1 + cfg.z_fwd].to_vec(),
                source_video: video.id.clone(),
                stop_index: stop,
            }
        })
        .collect()
}

/// Reverses the forward window and splits it after `n_obs_bwd` actions.
pub fn make_backward_instance(fwd: &AnticipationInstance, n_obs_bwd: usize) -> Result<AnticipationInstance> {
    if fwd.direction != Direction::Forward {
        return Err(Error::InvalidConfig(
            "backward instances derive from forward instances only".into(),
        ));
    }
    let total = fwd.observed.len() + fwd.future.len();
    if n_obs_bwd == 0 || n_obs_bwd >= total {
        return Err(Error::InvalidBackwardSplit {
            n_obs_bwd,
            max: total.saturating_sub(1),
        });
    }
    let mut reversed = fwd.window();
    reversed.reverse();
    let future = reversed.split_off(n_obs_bwd);
    Ok(AnticipationInstance {
        direction: Direction::Backward,
        observed: reversed,
        future,
        source_video: fwd.source_video.clone(),
        stop_index: fwd.stop_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Verb,
    Noun,
    Action,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Verb, Axis::Noun, Axis::Action];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Verb => "verb",
            Axis::Noun => "noun",
            Axis::Action => "action",
        }
    }
}

/// Projects labels onto one axis. The action axis uses `verb * num_nouns + noun`.
pub fn project(seq: &[ActionLabel], axis: Axis, num_nouns: usize) -> Vec<usize> {
    seq.iter()
        .map(|a| match axis {
            Axis::Verb => a.verb,
            Axis::Noun => a.noun,
            Axis::Action => a.verb * num_nouns + a.noun,
        })
        .collect()
}

/// Replaces each label, with probability `rate`, by a uniformly drawn label.
pub fn corrupt_labels<R: Rng + ?Sized>(
    seq: &mut [ActionLabel],
    num_verbs: usize,
    num_nouns: usize,
    rate: f64,
    rng: &mut R,
) {
    if rate <= 0.0 {
        return;
    }
    for a in seq.iter_mut() {
        if rng.random::<f64>() < rate {
            *a = ActionLabel::new(rng.random_range(0..num_verbs), rng.random_range(0..num_nouns));
        }
    }
}
