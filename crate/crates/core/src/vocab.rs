//! Deterministic word-to-id mapping for the text encoder.
//!
//! Tokenization is lowercasing of whole word strings; the corpus already
//! arrives word-segmented. Id 0 is always the unknown-word slot so that a
//! vocabulary built on one split degrades gracefully on another.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dialogue::Conversation;
use crate::error::{CoreError, Result};

pub const UNK_WORD: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    /// Builds from an explicit word list. The unknown token is prepended when
    /// missing; duplicates are rejected.
    pub fn from_words<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Result<Self> {
        let mut list: Vec<String> = Vec::new();
        for w in words {
            list.push(w.as_ref().to_lowercase());
        }
        if !list.iter().any(|w| w == UNK_WORD) {
            list.insert(0, UNK_WORD.to_string());
        }
        let mut index = BTreeMap::new();
        for (i, w) in list.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(CoreError::Data {
                    detail: alloc::format!("duplicate vocabulary word {w:?}"),
                });
            }
        }
        Ok(Self { words: list, index })
    }

    /// Scans every word of every conversation; ids are assigned in sorted
    /// order after the unknown slot, so the result is independent of corpus
    /// ordering.
    pub fn build(conversations: &[Conversation]) -> Self {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for c in conversations {
            for u in &c.utterances {
                for w in &u.words {
                    seen.insert(w.text.to_lowercase());
                }
            }
        }
        seen.remove(UNK_WORD);
        let mut words = Vec::with_capacity(seen.len() + 1);
        words.push(UNK_WORD.to_string());
        words.extend(seen);
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Unknown words map to id 0.
    pub fn id(&self, word: &str) -> u32 {
        let lower = word.to_lowercase();
        self.index.get(&lower).copied().unwrap_or(0)
    }

    pub fn word(&self, id: u32) -> Result<&str> {
        self.words
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or(CoreError::LabelOutOfRange {
                label: id as usize,
                n_classes: self.words.len(),
            })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;

    fn try_from(words: Vec<String>) -> core::result::Result<Self, String> {
        Vocab::from_words(words).map_err(|e| e.to_string())
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.words
    }
}
