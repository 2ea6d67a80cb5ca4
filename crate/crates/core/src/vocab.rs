//! Verb/noun vocabularies and the action-label atom.
//!
//! Labels are carried as index pairs everywhere inside the crate; names only
//! appear at I/O boundaries. Names are lowercased on load.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEMO_VOCAB: &str = include_str!("../assets/demo_vocab.json");

/// A (verb, noun) pair of vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionLabel {
    pub verb: usize,
    pub noun: usize,
}

impl ActionLabel {
    pub const fn new(verb: usize, noun: usize) -> Self {
        Self { verb, noun }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.verb, self.noun)
    }
}

/// On-disk vocabulary document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyDoc {
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    verbs: Vec<String>,
    nouns: Vec<String>,
    verb_index: HashMap<String, usize>,
    noun_index: HashMap<String, usize>,
}

fn index_names(kind: &'static str, names: &[String]) -> Result<(Vec<String>, HashMap<String, usize>)> {
    if names.is_empty() {
        return Err(Error::EmptyVocabulary(kind));
    }
    let mut out = Vec::with_capacity(names.len());
    let mut index = HashMap::with_capacity(names.len());
    for name in names {
        let norm = name.trim().to_lowercase();
        if norm.is_empty() || norm.chars().any(char::is_whitespace) {
            return Err(Error::InvalidName {
                kind,
                name: name.clone(),
            });
        }
        if index.insert(norm.clone(), out.len()).is_some() {
            return Err(Error::DuplicateName { kind, name: norm });
        }
        out.push(norm);
    }
    Ok((out, index))
}

impl Vocabulary {
    pub fn new(verbs: &[String], nouns: &[String]) -> Result<Self> {
        let (verbs, verb_index) = index_names("verb", verbs)?;
        let (nouns, noun_index) = index_names("noun", nouns)?;
        Ok(Self {
            verbs,
            nouns,
            verb_index,
            noun_index,
        })
    }

    /// Builds a vocabulary from a parsed document; indices follow document order.
    pub fn from_doc(doc: &VocabularyDoc) -> Result<Self> {
        Self::new(&doc.verbs, &doc.nouns)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: VocabularyDoc = serde_json::from_str(text).map_err(|e| Error::Parse(format!("vocabulary: {e}")))?;
        Self::from_doc(&doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: VocabularyDoc =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_doc(&doc)
    }

    /// The 8-verb, 12-noun kitchen vocabulary shipped with the crate.
    pub fn demo() -> Self {
        Self::from_json(DEMO_VOCAB).expect("bundled demo vocabulary is valid")
    }

    /// A synthetic vocabulary with `verbs` verb names and `nouns` noun names
    /// (`verb000`, `noun000`, ...). `ego4d_scale()` uses the 117/521 sizes.
    pub fn synthetic(verbs: usize, nouns: usize) -> Result<Self> {
        let v: Vec<String> = (0..verbs).map(|i| format!("verb{i:03}")).collect();
        let n: Vec<String> = (0..nouns).map(|i| format!("noun{i:03}")).collect();
        Self::new(&v, &n)
    }

    pub fn ego4d_scale() -> Self {
        Self::synthetic(117, 521).expect("nonempty")
    }

    pub fn to_doc(&self) -> VocabularyDoc {
        VocabularyDoc {
            verbs: self.verbs.clone(),
            nouns: self.nouns.clone(),
        }
    }

    pub fn num_verbs(&self) -> usize {
        self.verbs.len()
    }

    pub fn num_nouns(&self) -> usize {
        self.nouns.len()
    }

    pub fn num_actions(&self) -> usize {
        self.verbs.len() * self.nouns.len()
    }

    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }

    pub fn nouns(&self) -> &[String] {
        &self.nouns
    }

    pub fn verb_id(&self, name: &str) -> Option<usize> {
        self.verb_index.get(&name.to_lowercase()).copied()
    }

    pub fn noun_id(&self, name: &str) -> Option<usize> {
        self.noun_index.get(&name.to_lowercase()).copied()
    }

    pub fn contains(&self, a: ActionLabel) -> bool {
        a.verb < self.verbs.len() && a.noun < self.nouns.len()
    }

    pub fn check(&self, a: ActionLabel) -> Result<()> {
        if self.contains(a) {
            Ok(())
        } else {
            Err(Error::UnknownLabel(format!(
                "{a} outside {}x{} vocabulary",
                self.verbs.len(),
                self.nouns.len()
            )))
        }
    }

    pub fn verb_name(&self, verb: usize) -> Result<&str> {
        self.verbs
            .get(verb)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownLabel(format!("verb id {verb}")))
    }

    pub fn noun_name(&self, noun: usize) -> Result<&str> {
        self.nouns
            .get(noun)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownLabel(format!("noun id {noun}")))
    }

    /// `"<verb> <noun>"`.
    pub fn action_to_text(&self, a: ActionLabel) -> Result<String> {
        Ok(format!("{} {}", self.verb_name(a.verb)?, self.noun_name(a.noun)?))
    }

    pub fn parse_action(&self, s: &str) -> Result<ActionLabel> {
        let mut parts = s.split(' ');
        let (Some(verb), Some(noun), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse(format!("expected `<verb> <noun>`, got `{s}`")));
        };
        if verb.is_empty() || noun.is_empty() {
            return Err(Error::Parse(format!("expected `<verb> <noun>`, got `{s}`")));
        }
        self.resolve(verb, noun)
    }

    /// Looks up a (verb name, noun name) pair.
    pub fn resolve(&self, verb: &str, noun: &str) -> Result<ActionLabel> {
        let v = self
            .verb_id(verb)
            .ok_or_else(|| Error::UnknownLabel(format!("verb `{verb}`")))?;
        let n = self
            .noun_id(noun)
            .ok_or_else(|| Error::UnknownLabel(format!("noun `{noun}`")))?;
        Ok(ActionLabel::new(v, n))
    }
}
