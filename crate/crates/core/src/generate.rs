//! Forward-only, grammar-constrained candidate generation.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecoderState, Parameters};
use crate::prompt::{
    advance, decode_actions, encode_prompt, next_token_mask, GrammarState, PreambleMode, Token, TokenSpace,
};
use crate::seed;
use crate::sequence::Direction;
use crate::vocab::{ActionLabel, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Candidate 0 is greedy, the rest are temperature samples.
    GreedyFirst,
    AllSampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub k: usize,
    pub temperature: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            k: 5,
            temperature: 1.0,
            strategy: Strategy::GreedyFirst,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub instance_id: String,
    pub candidates: Vec<Vec<ActionLabel>>,
}

/// Zeroes masked-off entries and rescales the rest to sum to one.
pub fn renormalize_masked(dist: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if dist.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "distribution of {} entries, mask of {}",
            dist.len(),
            mask.len()
        )));
    }
    let mut out: Vec<f64> = dist.iter().zip(mask).map(|(&p, &m)| if m { p } else { 0.0 }).collect();
    let total: f64 = out.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::EmptySupport);
    }
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

fn argmax_admitted(logits: &[f64], mask: &[bool]) -> Result<Token> {
    let mut best: Option<(Token, f64)> = None;
    for (t, (&l, &m)) in logits.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|(_, b)| l > b) {
            best = Some((t, l));
        }
    }
    best.map(|(t, _)| t).ok_or(Error::EmptySupport)
}

fn sample_admitted<R: Rng + ?Sized>(logits: &[f64], mask: &[bool], temperature: f64, rng: &mut R) -> Result<Token> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let tempered: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { ((l - max) / temperature).exp() } else { 0.0 })
        .collect();
    let probs = renormalize_masked(&tempered, mask)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (t, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = Some(t);
            if u < acc {
                return Ok(t);
            }
        }
    }
    last.ok_or(Error::EmptySupport)
}

/// Produces `cfg.k` candidate futures of exactly `z` actions for one observed
/// interval. The forward preamble is always used.
///
/// Candidate `c` draws from its own stream derived from
/// `(cfg.seed, instance_id, c)`, so results do not depend on evaluation order.
pub fn generate_candidates(
    params: &Parameters,
    space: &TokenSpace,
    observed: &[ActionLabel],
    z: usize,
    cfg: &GenerationConfig,
    mode: PreambleMode,
    instance_id: &str,
) -> Result<CandidateSet> {
    cfg.validate()?;
    let prompt = encode_prompt(space, observed, Direction::Forward, mode)?;
    let total = prompt.len() + 3 * z;
    if total > params.config.context_len.min(space.context_len) + 1 {
        return Err(Error::ContextOverflow {
            len: total,
            context_len: params.config.context_len.min(space.context_len),
        });
    }
    let mut base = DecoderState::new(params);
    let mut prompt_logits = Vec::new();
    for &t in &prompt {
        prompt_logits = base.push(t)?;
    }
    let id_hash = seed::hash_str(instance_id);
    let mut candidates = Vec::with_capacity(cfg.k);
    for c in 0..cfg.k {
        let greedy = cfg.strategy == Strategy::GreedyFirst && c == 0;
        let mut rng = seed::stream(cfg.seed, &[id_hash, c as u64]);
        let mut state = base.clone();
        let mut logits = prompt_logits.clone();
        let mut grammar = GrammarState::ExpectVerb;
        let mut emitted = Vec::with_capacity(3 * z);
        let mut actions = 0;
        while grammar != GrammarState::Done {
            let mask = next_token_mask(space, grammar, actions, z);
            let tok = if greedy {
                argmax_admitted(&logits, &mask)?
            } else {
                sample_admitted(&logits, &mask, cfg.temperature, &mut rng)?
            };
            grammar = advance(space, grammar, tok).ok_or_else(|| Error::GrammarViolation {
                position: emitted.len(),
                detail: format!("token {tok} admitted by mask but rejected by grammar"),
            })?;
            if grammar == GrammarState::ExpectSepOrEos {
                actions += 1;
            }
            emitted.push(tok);
            if grammar != GrammarState::Done {
                logits = state.push(tok)?;
            }
        }
        candidates.push(decode_actions(space, &emitted)?);
    }
    Ok(CandidateSet {
        instance_id: instance_id.to_string(),
        candidates,
    })
}

#[derive(Serialize)]
struct NamedAction<'a> {
    verb: &'a str,
    noun: &'a str,
}

#[derive(Serialize)]
struct CandidateLine<'a> {
    instance_id: &'a str,
    candidate_index: usize,
    actions: Vec<NamedAction<'a>>,
}

/// One JSON object per candidate: `{instance_id, candidate_index, actions}`.
pub fn write_candidates_jsonl<W: Write>(mut w: W, vocab: &Vocabulary, sets: &[CandidateSet]) -> Result<()> {
    for set in sets {
        for (i, cand) in set.candidates.iter().enumerate() {
            let actions = cand
                .iter()
                .map(|a| {
                    Ok(NamedAction {
                        verb: vocab.verb_name(a.verb)?,
                        noun: vocab.noun_name(a.noun)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let line = CandidateLine {
                instance_id: &set.instance_id,
                candidate_index: i,
                actions,
            };
            let text = serde_json::to_string(&line).map_err(|e| Error::Parse(e.to_string()))?;
            writeln!(w, "{text}").map_err(|e| Error::io("<candidates>", e))?;
        }
    }
    Ok(())
}
