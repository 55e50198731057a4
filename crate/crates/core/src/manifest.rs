//! The on-disk conversation format: JSON lines, one header line followed by
//! one utterance record per line. Conversations are the contiguous runs of
//! records sharing a conv_id. Parsing is strict and reports 1-based line
//! numbers; writing is deterministic so identical data produces identical
//! bytes.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dialogue::{Conversation, Utterance, VideoFrame, WordFrame};
use crate::error::{CoreError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub audio_width: usize,
    pub video_width: usize,
    /// Video window length per sample.
    pub n: usize,
}

impl Default for ManifestHeader {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            audio_width: 16,
            video_width: 16,
            n: 16,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct UttRecord {
    conv_id: String,
    utt_id: String,
    speaker: String,
    words: Vec<WordFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_frames: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    video_frames: Option<Vec<VideoFrame>>,
}

fn parse_err(line: usize, detail: String) -> CoreError {
    CoreError::Parse { line, detail }
}

fn validate_record(rec: &UttRecord, header: &ManifestHeader, line: usize) -> Result<()> {
    if rec.words.is_empty() {
        return Err(parse_err(line, format!("utterance {} has no words", rec.utt_id)));
    }
    let mut prev_end = f64::NEG_INFINITY;
    for (i, w) in rec.words.iter().enumerate() {
        if !(w.t_start.is_finite() && w.t_end.is_finite()) || w.t_start > w.t_end {
            return Err(parse_err(
                line,
                format!("word {i} of {} has an invalid time span", rec.utt_id),
            ));
        }
        if w.t_start < prev_end {
            return Err(parse_err(
                line,
                format!("word {i} of {} overlaps the previous word", rec.utt_id),
            ));
        }
        prev_end = w.t_end;
    }
    if let Some(audio) = &rec.audio_frames {
        if audio.len() != rec.words.len() {
            return Err(parse_err(
                line,
                format!(
                    "utterance {} has {} words but {} audio frames",
                    rec.utt_id,
                    rec.words.len(),
                    audio.len()
                ),
            ));
        }
        for f in audio {
            if f.len() != header.audio_width {
                return Err(parse_err(
                    line,
                    format!(
                        "audio frame width {} does not match header width {}",
                        f.len(),
                        header.audio_width
                    ),
                ));
            }
        }
    }
    if let Some(video) = &rec.video_frames {
        let mut prev_t = f64::NEG_INFINITY;
        for f in video {
            if f.values.len() != header.video_width {
                return Err(parse_err(
                    line,
                    format!(
                        "video frame width {} does not match header width {}",
                        f.values.len(),
                        header.video_width
                    ),
                ));
            }
            if !f.t.is_finite() || f.t < prev_t {
                return Err(parse_err(
                    line,
                    format!("video frames of {} are out of time order", rec.utt_id),
                ));
            }
            prev_t = f.t;
        }
    }
    Ok(())
}

/// Parses a whole manifest. Blank lines are skipped; the first non-blank line
/// must be the header.
pub fn parse_manifest(text: &str) -> Result<(ManifestHeader, Vec<Conversation>)> {
    let mut header: Option<ManifestHeader> = None;
    let mut conversations: Vec<Conversation> = Vec::new();
    let mut finished: BTreeSet<String> = BTreeSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if header.is_none() {
            let h: ManifestHeader = serde_json::from_str(trimmed)
                .map_err(|e| parse_err(line, format!("bad header: {e}")))?;
            if h.schema_version != SCHEMA_VERSION {
                return Err(parse_err(
                    line,
                    format!(
                        "unsupported schema version {} (expected {})",
                        h.schema_version, SCHEMA_VERSION
                    ),
                ));
            }
            header = Some(h);
            continue;
        }
        let rec: UttRecord = serde_json::from_str(trimmed)
            .map_err(|e| parse_err(line, format!("bad utterance record: {e}")))?;
        validate_record(&rec, header.as_ref().unwrap(), line)?;

        let start_new = match conversations.last() {
            Some(c) => c.conv_id != rec.conv_id,
            None => true,
        };
        if start_new {
            if finished.contains(&rec.conv_id) {
                return Err(parse_err(
                    line,
                    format!("conversation {} appears in two separate blocks", rec.conv_id),
                ));
            }
            if let Some(prev) = conversations.last() {
                finished.insert(prev.conv_id.clone());
            }
            conversations.push(Conversation {
                conv_id: rec.conv_id.clone(),
                speakers: Vec::new(),
                utterances: Vec::new(),
            });
        }
        let conv = conversations.last_mut().unwrap();
        if conv.utterances.iter().any(|u| u.utt_id == rec.utt_id) {
            return Err(parse_err(
                line,
                format!("duplicate utterance id {} in conversation {}", rec.utt_id, rec.conv_id),
            ));
        }
        let utt = Utterance {
            utt_id: rec.utt_id,
            speaker: rec.speaker,
            words: rec.words,
            audio_frames: rec.audio_frames,
            video_frames: rec.video_frames,
        };
        if let Some(prev) = conv.utterances.last() {
            if utt.t_start() < prev.t_start() {
                return Err(parse_err(
                    line,
                    format!("utterance {} starts before its predecessor", utt.utt_id),
                ));
            }
        }
        if !conv.speakers.contains(&utt.speaker) {
            if conv.speakers.len() == 2 {
                return Err(parse_err(
                    line,
                    format!("conversation {} has more than two speakers", conv.conv_id),
                ));
            }
            conv.speakers.push(utt.speaker.clone());
        }
        conv.utterances.push(utt);
    }

    // A file with no records at all parses to an empty dataset.
    Ok((header.unwrap_or_default(), conversations))
}

/// Serializes deterministically: fixed field order, shortest-round-trip
/// floats, exactly one record per line, trailing newline.
pub fn write_manifest(header: &ManifestHeader, conversations: &[Conversation]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for conv in conversations {
        for utt in &conv.utterances {
            let rec = UttRecord {
                conv_id: conv.conv_id.clone(),
                utt_id: utt.utt_id.clone(),
                speaker: utt.speaker.clone(),
                words: utt.words.clone(),
                audio_frames: utt.audio_frames.clone(),
                video_frames: utt.video_frames.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}
