//! Conversation structure and the word-level annotation rules.
//!
//! A word is BACKCHANNEL when its normalized token (or, for multi-word
//! vocabulary phrases, the whole utterance's normalized text) matches the
//! backchannel vocabulary AND its time span overlaps an utterance of the other
//! speaker. Otherwise the final word of each utterance is TURN and everything
//! else is KEEP. Backchannel wins over TURN on final words.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Keep,
    Turn,
    Backchannel,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Keep, Action::Turn, Action::Backchannel];

    pub fn index(self) -> usize {
        match self {
            Action::Keep => 0,
            Action::Turn => 1,
            Action::Backchannel => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Action> {
        match i {
            0 => Ok(Action::Keep),
            1 => Ok(Action::Turn),
            2 => Ok(Action::Backchannel),
            _ => Err(CoreError::LabelOutOfRange {
                label: i,
                n_classes: 3,
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Keep => "keep",
            Action::Turn => "turn",
            Action::Backchannel => "backchannel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordFrame {
    #[serde(rename = "w")]
    pub text: String,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFrame {
    pub t: f64,
    pub values: Vec<f64>,
}

/// One sentence-level clip by one speaker. Audio is one feature frame per
/// word; video is an arbitrary time-stamped frame sequence. Either stream may
/// be missing entirely, in which case that modality is absent for every word
/// of the utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker: String,
    pub words: Vec<WordFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_frames: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_frames: Option<Vec<VideoFrame>>,
}

impl Utterance {
    pub fn t_start(&self) -> f64 {
        self.words[0].t_start
    }

    pub fn t_end(&self) -> f64 {
        self.words[self.words.len() - 1].t_end
    }
}

/// A dyadic conversation. `speakers` lists the distinct speaker ids seen in
/// the utterances (a conversation with a single utterance names only one side
/// of the dyad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conv_id: String,
    pub speakers: Vec<String>,
    pub utterances: Vec<Utterance>,
}

/// Lowercase, drop punctuation, collapse whitespace runs to single spaces.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else if ch.is_alphanumeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            for lc in ch.to_lowercase() {
                out.push(lc);
            }
        }
        // Punctuation and symbols are dropped without breaking the token.
    }
    out
}

/// Backchannel vocabulary, stored normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct BcVocab {
    entries: BTreeSet<String>,
}

impl BcVocab {
    pub fn from_phrases<I: IntoIterator<Item = S>, S: AsRef<str>>(phrases: I) -> Self {
        Self {
            entries: phrases
                .into_iter()
                .map(|p| normalize_text(p.as_ref()))
                .filter(|p| !p.is_empty())
                .collect(),
        }
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.entries.contains(normalized)
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|s| s.as_str())
    }
}

impl Default for BcVocab {
    fn default() -> Self {
        Self::from_phrases([
            "yeah", "uh-huh", "mm-hmm", "hmm", "mhm", "right", "okay", "ok", "i see", "wow",
            "really", "yes", "sure", "exactly",
        ])
    }
}

fn spans_overlap(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> bool {
    a_start < b_end && b_start < a_end
}

/// Applies the annotation rules, returning a fully labeled copy. Total on any
/// structurally valid conversation, and idempotent: labels are recomputed from
/// scratch on every call.
pub fn label_words(conv: &Conversation, bc_vocab: &BcVocab) -> Conversation {
    let mut labeled = conv.clone();
    let spans: Vec<(String, f64, f64)> = conv
        .utterances
        .iter()
        .map(|u| (u.speaker.clone(), u.t_start(), u.t_end()))
        .collect();

    for utt in &mut labeled.utterances {
        let utt_text = {
            let mut joined = String::new();
            for (i, w) in utt.words.iter().enumerate() {
                if i > 0 {
                    joined.push(' ');
                }
                joined.push_str(&w.text);
            }
            normalize_text(&joined)
        };
        let whole_utt_matches = bc_vocab.contains(&utt_text);
        let last = utt.words.len() - 1;
        for (i, word) in utt.words.iter_mut().enumerate() {
            let vocab_hit = whole_utt_matches || bc_vocab.contains(&normalize_text(&word.text));
            let overlaps_other = vocab_hit
                && spans
                    .iter()
                    .any(|(spk, s, e)| {
                        *spk != utt.speaker && spans_overlap(word.t_start, word.t_end, *s, *e)
                    });
            word.label = Some(if vocab_hit && overlaps_other {
                Action::Backchannel
            } else if i == last {
                Action::Turn
            } else {
                Action::Keep
            });
        }
    }
    labeled
}

/// Convenience used by tests and the synthetic generator.
pub fn word(text: &str, t_start: f64, t_end: f64) -> WordFrame {
    WordFrame {
        text: text.to_owned(),
        t_start,
        t_end,
        label: None,
    }
}
