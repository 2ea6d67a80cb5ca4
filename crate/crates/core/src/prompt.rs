//! Token layout, prompt encoding and the action-sequence output grammar.
//!
//! Layout: `0=PAD 1=BOS 2=EOS 3=SEP 4=FWD 5=BWD`, then the forward and
//! backward descriptor blocks, then one token per verb, then one per noun.
//! A prompt is `BOS, preamble, (verb noun SEP)*observed`; the target is
//! `(verb noun SEP)*future` with the final SEP replaced by EOS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{AnticipationInstance, Direction};
use crate::vocab::{ActionLabel, Vocabulary};

pub type Token = usize;

pub const PAD: Token = 0;
pub const BOS: Token = 1;
pub const EOS: Token = 2;
pub const SEP: Token = 3;
pub const FWD: Token = 4;
pub const BWD: Token = 5;
const NUM_SPECIAL: usize = 6;

pub const DEFAULT_DESCRIPTOR_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpace {
    pub num_verbs: usize,
    pub num_nouns: usize,
    /// Length of each direction's descriptor block.
    pub descriptor_len: usize,
    pub context_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreambleMode {
    /// A single control token per direction.
    #[serde(rename = "special")]
    SpecialToken,
    /// A block of descriptor tokens spelling out the task.
    #[serde(rename = "description")]
    DetailedDescription,
}

impl PreambleMode {
    pub fn name(self) -> &'static str {
        match self {
            PreambleMode::SpecialToken => "special",
            PreambleMode::DetailedDescription => "description",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "special" => Ok(PreambleMode::SpecialToken),
            "description" => Ok(PreambleMode::DetailedDescription),
            other => Err(Error::InvalidConfig(format!(
                "unknown preamble `{other}`, expected special or description"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInstance {
    pub direction: Direction,
    pub tokens: Vec<Token>,
    pub loss_mask: Vec<bool>,
    pub prompt_len: usize,
}

impl EncodedInstance {
    pub fn num_targets(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrammarState {
    ExpectVerb,
    ExpectNoun,
    ExpectSepOrEos,
    Done,
}

impl TokenSpace {
    pub fn new(vocab: &Vocabulary, context_len: usize) -> Self {
        Self {
            num_verbs: vocab.num_verbs(),
            num_nouns: vocab.num_nouns(),
            descriptor_len: DEFAULT_DESCRIPTOR_LEN,
            context_len,
        }
    }

    pub fn size(&self) -> usize {
        NUM_SPECIAL + 2 * self.descriptor_len + self.num_verbs + self.num_nouns
    }

    pub fn descriptor_range(&self, direction: Direction) -> std::ops::Range<Token> {
        let start = match direction {
            Direction::Forward => NUM_SPECIAL,
            Direction::Backward => NUM_SPECIAL + self.descriptor_len,
        };
        start..start + self.descriptor_len
    }

    pub fn verb_range(&self) -> std::ops::Range<Token> {
        let start = NUM_SPECIAL + 2 * self.descriptor_len;
        start..start + self.num_verbs
    }

    pub fn noun_range(&self) -> std::ops::Range<Token> {
        let start = self.verb_range().end;
        start..start + self.num_nouns
    }

    pub fn verb_token(&self, verb: usize) -> Token {
        self.verb_range().start + verb
    }

    pub fn noun_token(&self, noun: usize) -> Token {
        self.noun_range().start + noun
    }

    pub fn token_to_verb(&self, t: Token) -> Option<usize> {
        self.verb_range().contains(&t).then(|| t - self.verb_range().start)
    }

    pub fn token_to_noun(&self, t: Token) -> Option<usize> {
        self.noun_range().contains(&t).then(|| t - self.noun_range().start)
    }

    /// Length of an encoding with the given interval lengths.
    pub fn encoded_len(&self, mode: PreambleMode, observed: usize, future: usize) -> usize {
        let preamble = match mode {
            PreambleMode::SpecialToken => 1,
            PreambleMode::DetailedDescription => self.descriptor_len,
        };
        1 + preamble + 3 * observed + 3 * future
    }

    /// Human-readable token name, for debug dumps.
    pub fn token_name(&self, t: Token, vocab: Option<&Vocabulary>) -> String {
        match t {
            PAD => "<pad>".into(),
            BOS => "<bos>".into(),
            EOS => "<eos>".into(),
            SEP => "<sep>".into(),
            FWD => "[forward]".into(),
            BWD => "[backward]".into(),
            _ => {
                if let Some(v) = self.token_to_verb(t) {
                    match vocab.and_then(|voc| voc.verb_name(v).ok()) {
                        Some(name) => format!("v:{name}"),
                        None => format!("v{v}"),
                    }
                } else if let Some(n) = self.token_to_noun(t) {
                    match vocab.and_then(|voc| voc.noun_name(n).ok()) {
                        Some(name) => format!("n:{name}"),
                        None => format!("n{n}"),
                    }
                } else if self.descriptor_range(Direction::Forward).contains(&t) {
                    format!("<fd{}>", t - self.descriptor_range(Direction::Forward).start)
                } else if self.descriptor_range(Direction::Backward).contains(&t) {
                    format!("<bd{}>", t - self.descriptor_range(Direction::Backward).start)
                } else {
                    format!("<unk{t}>")
                }
            }
        }
    }

    fn check_label(&self, a: ActionLabel) -> Result<()> {
        if a.verb < self.num_verbs && a.noun < self.num_nouns {
            Ok(())
        } else {
            Err(Error::UnknownLabel(format!(
                "{a} outside {}x{} token space",
                self.num_verbs, self.num_nouns
            )))
        }
    }
}

pub fn encode_preamble(space: &TokenSpace, mode: PreambleMode, direction: Direction) -> Vec<Token> {
    match (mode, direction) {
        (PreambleMode::SpecialToken, Direction::Forward) => vec![FWD],
        (PreambleMode::SpecialToken, Direction::Backward) => vec![BWD],
        (PreambleMode::DetailedDescription, d) => space.descriptor_range(d).collect(),
    }
}

/// Prompt tokens only: `BOS, preamble, (verb noun SEP)*`.
pub fn encode_prompt(
    space: &TokenSpace,
    observed: &[ActionLabel],
    direction: Direction,
    mode: PreambleMode,
) -> Result<Vec<Token>> {
    let mut tokens = Vec::with_capacity(2 + space.descriptor_len + 3 * observed.len());
    tokens.push(BOS);
    tokens.extend(encode_preamble(space, mode, direction));
    for &a in observed {
        space.check_label(a)?;
        tokens.extend([space.verb_token(a.verb), space.noun_token(a.noun), SEP]);
    }
    Ok(tokens)
}

pub fn encode_instance(space: &TokenSpace, inst: &AnticipationInstance, mode: PreambleMode) -> Result<EncodedInstance> {
    encode_instance_with(space, inst, mode, true)
}

/// With `loss_on_structure = false` the SEP/EOS targets are excluded from the
/// loss mask, leaving only verb and noun positions.
pub fn encode_instance_with(
    space: &TokenSpace,
    inst: &AnticipationInstance,
    mode: PreambleMode,
    loss_on_structure: bool,
) -> Result<EncodedInstance> {
    let len = space.encoded_len(mode, inst.observed.len(), inst.future.len());
    if len > space.context_len {
        return Err(Error::ContextOverflow {
            len,
            context_len: space.context_len,
        });
    }
    if inst.future.is_empty() {
        return Err(Error::InvalidConfig("instance has an empty future interval".into()));
    }
    let mut tokens = encode_prompt(space, &inst.observed, inst.direction, mode)?;
    let prompt_len = tokens.len();
    let mut loss_mask = vec![false; prompt_len];
    for (i, &a) in inst.future.iter().enumerate() {
        space.check_label(a)?;
        let last = i + 1 == inst.future.len();
        tokens.extend([
            space.verb_token(a.verb),
            space.noun_token(a.noun),
            if last { EOS } else { SEP },
        ]);
        loss_mask.extend([true, true, loss_on_structure]);
    }
    debug_assert_eq!(tokens.len(), len);
    Ok(EncodedInstance {
        direction: inst.direction,
        tokens,
        loss_mask,
        prompt_len,
    })
}

/// Parses a target-region emission `(verb noun SEP)* verb noun EOS`.
pub fn decode_actions(space: &TokenSpace, generated: &[Token]) -> Result<Vec<ActionLabel>> {
    let mut out = Vec::new();
    let mut state = GrammarState::ExpectVerb;
    let mut verb = 0;
    for (position, &t) in generated.iter().enumerate() {
        let violation = |expected: &str| Error::GrammarViolation {
            position,
            detail: format!("expected {expected}, got token {t}"),
        };
        state = match state {
            GrammarState::ExpectVerb => {
                verb = space.token_to_verb(t).ok_or_else(|| violation("verb"))?;
                GrammarState::ExpectNoun
            }
            GrammarState::ExpectNoun => {
                let noun = space.token_to_noun(t).ok_or_else(|| violation("noun"))?;
                out.push(ActionLabel::new(verb, noun));
                GrammarState::ExpectSepOrEos
            }
            GrammarState::ExpectSepOrEos => match t {
                SEP => GrammarState::ExpectVerb,
                EOS => GrammarState::Done,
                _ => return Err(violation("SEP or EOS")),
            },
            GrammarState::Done => return Err(violation("end of output")),
        };
    }
    if state == GrammarState::Done {
        Ok(out)
    } else {
        Err(Error::TruncatedOutput(generated.len()))
    }
}

/// Admissible next tokens. SEP is allowed only while fewer than `target_len`
/// actions have been emitted and EOS only once exactly `target_len` have.
pub fn next_token_mask(
    space: &TokenSpace,
    state: GrammarState,
    emitted_actions: usize,
    target_len: usize,
) -> Vec<bool> {
    let mut mask = vec![false; space.size()];
    match state {
        GrammarState::ExpectVerb => mask[space.verb_range()].fill(true),
        GrammarState::ExpectNoun => mask[space.noun_range()].fill(true),
        GrammarState::ExpectSepOrEos => {
            if emitted_actions < target_len {
                mask[SEP] = true;
            } else if emitted_actions == target_len {
                mask[EOS] = true;
            }
        }
        GrammarState::Done => {}
    }
    mask
}

/// Grammar transition after emitting `t` in state `state`.
pub fn advance(space: &TokenSpace, state: GrammarState, t: Token) -> Option<GrammarState> {
    match state {
        GrammarState::ExpectVerb if space.token_to_verb(t).is_some() => Some(GrammarState::ExpectNoun),
        GrammarState::ExpectNoun if space.token_to_noun(t).is_some() => Some(GrammarState::ExpectSepOrEos),
        GrammarState::ExpectSepOrEos if t == SEP => Some(GrammarState::ExpectVerb),
        GrammarState::ExpectSepOrEos if t == EOS => Some(GrammarState::Done),
        _ => None,
    }
}
