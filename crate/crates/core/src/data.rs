//! Synthetic scenario corpora with planted long-range structure, plus
//! annotation-file I/O.
//!
//! Each video belongs to a latent scene type. Scene types own a small set of
//! motifs (short action sub-sequences); a pool of shared motifs belongs to no
//! scene. A video is a concatenation of motifs:
//!
//! * early third: motifs from the video's scene,
//! * middle third: shared motifs with probability `noise_rate`, else scene motifs,
//! * late third: scene motifs with probability `coupling`, else shared motifs.
//!
//! With `coupling > 0` the late interval carries the same scene identity that
//! governs the early interval; with `coupling = 0` the two are independent.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::sequence::AnnotatedVideo;
use crate::vocab::{ActionLabel, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_scene_types: usize,
    pub motifs_per_scene: usize,
    pub num_shared_motifs: usize,
    /// Inclusive motif length bounds.
    pub motif_len_range: [usize; 2],
    pub video_len: usize,
    pub num_videos: usize,
    pub coupling: f64,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_scene_types: 4,
            motifs_per_scene: 3,
            num_shared_motifs: 4,
            motif_len_range: [2, 4],
            video_len: 40,
            num_videos: 200,
            coupling: 0.8,
            noise_rate: 0.1,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, min_video_len: usize) -> Result<()> {
        let [lo, hi] = self.motif_len_range;
        if self.num_scene_types == 0 || self.motifs_per_scene == 0 || self.num_shared_motifs == 0 {
            return Err(Error::InvalidConfig(
                "scene, motif and shared-motif counts must be positive".into(),
            ));
        }
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!("bad motif_len_range [{lo}, {hi}]")));
        }
        if self.video_len < min_video_len {
            return Err(Error::InvalidConfig(format!(
                "video_len {} shorter than one window ({min_video_len})",
                self.video_len
            )));
        }
        for (name, r) in [("coupling", self.coupling), ("noise_rate", self.noise_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }

    pub fn num_motifs(&self) -> usize {
        self.num_scene_types * self.motifs_per_scene + self.num_shared_motifs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    Scene(usize),
    Shared,
}

struct Motif {
    owner: Owner,
    actions: Vec<ActionLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Generator-side diagnostics of the planted structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityMetrics {
    /// Mutual information (nats) between a video's scene and the owner
    /// (scene or shared) of each late-interval motif.
    pub early_late_mutual_information: f64,
    /// Fraction of late-interval motifs owned by the video's own scene.
    pub late_scene_match_rate: f64,
    pub scene_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub config: ScenarioConfig,
    pub split: SplitIds,
    pub sanity: SanityMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<AnnotatedVideo>,
    pub val: Vec<AnnotatedVideo>,
    pub test: Vec<AnnotatedVideo>,
    pub meta: CorpusMeta,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &AnnotatedVideo> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

fn random_action<R: Rng + ?Sized>(vocab: &Vocabulary, rng: &mut R) -> ActionLabel {
    ActionLabel::new(
        rng.random_range(0..vocab.num_verbs()),
        rng.random_range(0..vocab.num_nouns()),
    )
}

fn motif_bank(vocab: &Vocabulary, cfg: &ScenarioConfig) -> Result<Vec<Motif>> {
    let needed = cfg.num_motifs();
    if vocab.num_actions() < needed {
        return Err(Error::InsufficientVocabulary {
            needed,
            available: vocab.num_actions(),
        });
    }
    let mut rng = seed::stream(cfg.seed, &[0x006d_6f74_6966]);
    // Distinct leading actions make every motif identifiable from its first label.
    let leads = sample(&mut rng, vocab.num_actions(), needed).into_vec();
    let [lo, hi] = cfg.motif_len_range;
    Ok(leads
        .into_iter()
        .enumerate()
        .map(|(i, lead)| {
            let owner = if i < cfg.num_scene_types * cfg.motifs_per_scene {
                Owner::Scene(i / cfg.motifs_per_scene)
            } else {
                Owner::Shared
            };
            let len = rng.random_range(lo..=hi);
            let mut actions = vec![ActionLabel::new(lead / vocab.num_nouns(), lead % vocab.num_nouns())];
            actions.extend((1..len).map(|_| random_action(vocab, &mut rng)));
            Motif { owner, actions }
        })
        .collect())
}

fn mutual_information(joint: &[Vec<usize>]) -> f64 {
    let total: usize = joint.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let cols: Vec<f64> = (0..joint[0].len())
        .map(|j| joint.iter().map(|r| r[j]).sum::<usize>() as f64)
        .collect();
    let mut mi = 0.0;
    for (i, row) in joint.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p * n * n / (rows[i] * cols[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Generates `cfg.num_videos` videos and splits them 70/10/20 by index.
pub fn generate_corpus(vocab: &Vocabulary, cfg: &ScenarioConfig) -> Result<Corpus> {
    cfg.validate(1)?;
    let bank = motif_bank(vocab, cfg)?;
    let scenes = cfg.num_scene_types;
    let scene_motifs: Vec<Vec<usize>> = (0..scenes)
        .map(|s| (0..bank.len()).filter(|&m| bank[m].owner == Owner::Scene(s)).collect())
        .collect();
    let shared: Vec<usize> = (0..bank.len()).filter(|&m| bank[m].owner == Owner::Shared).collect();

    let mut joint = vec![vec![0usize; scenes + 1]; scenes];
    let mut scene_counts = vec![0usize; scenes];
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for i in 0..cfg.num_videos {
        let mut rng = seed::stream(cfg.seed, &[0x0076_6964_656f, i as u64]);
        let scene = rng.random_range(0..scenes);
        scene_counts[scene] += 1;
        let mut segments = Vec::with_capacity(cfg.video_len + 4);
        while segments.len() < cfg.video_len {
            let phase = 3 * segments.len() / cfg.video_len;
            let from_scene = match phase {
                0 => true,
                1 => rng.random::<f64>() >= cfg.noise_rate,
                _ => rng.random::<f64>() < cfg.coupling,
            };
            let pool = if from_scene { &scene_motifs[scene] } else { &shared };
            let m = pool[rng.random_range(0..pool.len())];
            if phase >= 2 {
                let col = match bank[m].owner {
                    Owner::Scene(s) => s,
                    Owner::Shared => scenes,
                };
                joint[scene][col] += 1;
            }
            segments.extend_from_slice(&bank[m].actions);
        }
        segments.truncate(cfg.video_len);
        videos.push(AnnotatedVideo {
            id: format!("vid-{i:04}"),
            segments,
        });
    }

    let late_total: usize = joint.iter().flatten().sum();
    let matched: usize = (0..scenes).map(|s| joint[s][s]).sum();
    let sanity = SanityMetrics {
        early_late_mutual_information: mutual_information(&joint),
        late_scene_match_rate: if late_total == 0 {
            0.0
        } else {
            matched as f64 / late_total as f64
        },
        scene_counts,
    };

    let n_train = cfg.num_videos * 7 / 10;
    let n_val = cfg.num_videos / 10;
    let test = videos.split_off(n_train + n_val);
    let val = videos.split_off(n_train);
    let train = videos;
    let ids = |v: &[AnnotatedVideo]| v.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
    let split = SplitIds {
        train: ids(&train),
        val: ids(&val),
        test: ids(&test),
    };
    Ok(Corpus {
        train,
        val,
        test,
        meta: CorpusMeta {
            config: *cfg,
            split,
            sanity,
        },
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    verb: String,
    noun: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVideo {
    id: String,
    segments: Vec<RawSegment>,
}

pub fn annotations_to_json(videos: &[AnnotatedVideo], vocab: &Vocabulary) -> Result<String> {
    let raw = videos
        .iter()
        .map(|v| {
            let segments = v
                .segments
                .iter()
                .map(|a| {
                    Ok(RawSegment {
                        verb: vocab.verb_name(a.verb)?.to_string(),
                        noun: vocab.noun_name(a.noun)?.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RawVideo {
                id: v.id.clone(),
                segments,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    serde_json::to_string_pretty(&raw).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses an annotation document; `origin` names the source in error messages.
pub fn annotations_from_json(text: &str, vocab: &Vocabulary, origin: &str) -> Result<Vec<AnnotatedVideo>> {
    let raw: Vec<RawVideo> = serde_json::from_str(text).map_err(|e| Error::Parse(format!("{origin}: {e}")))?;
    raw.into_iter()
        .map(|v| {
            let segments = v
                .segments
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    vocab
                        .resolve(&s.verb, &s.noun)
                        .map_err(|e| Error::UnknownLabel(format!("{origin}: video `{}` segment {i}: {e}", v.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AnnotatedVideo { id: v.id, segments })
        })
        .collect()
}

pub fn save_annotations(path: impl AsRef<Path>, videos: &[AnnotatedVideo], vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, annotations_to_json(videos, vocab)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_annotations(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<AnnotatedVideo>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    annotations_from_json(&text, vocab, &path.display().to_string())
}

pub const VOCAB_FILE: &str = "vocab.json";
pub const TRAIN_FILE: &str = "train.json";
pub const VAL_FILE: &str = "val.json";
pub const TEST_FILE: &str = "test.json";
pub const META_FILE: &str = "corpus_meta.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes the vocabulary, the three splits and the metadata sidecar into `dir`.
pub fn save_corpus(dir: impl AsRef<Path>, vocab: &Vocabulary, corpus: &Corpus) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(VOCAB_FILE), &vocab.to_doc())?;
    save_annotations(dir.join(TRAIN_FILE), &corpus.train, vocab)?;
    save_annotations(dir.join(VAL_FILE), &corpus.val, vocab)?;
    save_annotations(dir.join(TEST_FILE), &corpus.test, vocab)?;
    write_json(&dir.join(META_FILE), &corpus.meta)
}

pub fn load_corpus(dir: impl AsRef<Path>) -> Result<(Vocabulary, Corpus)> {
    let dir = dir.as_ref();
    let vocab = Vocabulary::load(dir.join(VOCAB_FILE))?;
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CorpusMeta =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", meta_path.display())))?;
    let corpus = Corpus {
        train: load_annotations(dir.join(TRAIN_FILE), &vocab)?,
        val: load_annotations(dir.join(VAL_FILE), &vocab)?,
        test: load_annotations(dir.join(TEST_FILE), &vocab)?,
        meta,
    };
    Ok((vocab, corpus))
}
