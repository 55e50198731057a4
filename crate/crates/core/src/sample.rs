//! Word-level training samples.
//!
//! Every labeled word of every utterance becomes one sample. The text input
//! is the token prefix from the utterance start through the current word; the
//! audio input is the per-word frame prefix over the same range (one frame
//! per word); the video input is a fixed-length window of the most recent
//! frames no later than the current word's end time, left-padded by repeating
//! the earliest selected frame, or all zeros when nothing has been seen yet.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dialogue::{Action, Conversation, VideoFrame};
use crate::error::{CoreError, Result};
use crate::fusion::ModalityMask;
use crate::vocab::Vocab;

/// Stream geometry shared by a dataset and the models trained on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpec {
    pub audio_width: usize,
    pub video_width: usize,
    /// Number of video frames per sample window; must be at least 1.
    pub video_window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub conv_id: String,
    pub utt_id: String,
    pub word_idx: usize,
    pub label: Action,
    pub tokens: Vec<u32>,
    /// One frame per word, utterance start through the current word.
    pub audio: Option<Vec<Vec<f64>>>,
    /// Exactly `video_window` frames after padding.
    pub video: Option<Vec<Vec<f64>>>,
    /// Which streams the source data actually carries. Text is always
    /// present; the word sequence is the sample's backbone.
    pub mask: ModalityMask,
}

/// Selects the last `n` frames with t <= t_end and left-pads by repeating the
/// earliest selected frame. With no eligible frame the window is all zeros.
/// Frames must be in non-decreasing time order.
pub fn video_window(frames: &[VideoFrame], t_end: f64, n: usize, width: usize) -> Vec<Vec<f64>> {
    assert!(n >= 1, "window must hold at least one frame");
    let eligible = frames.partition_point(|f| f.t <= t_end);
    if eligible == 0 {
        return vec![vec![0.0; width]; n];
    }
    let take = eligible.min(n);
    let first = &frames[eligible - take].values;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n - take {
        out.push(first.clone());
    }
    for f in &frames[eligible - take..eligible] {
        out.push(f.values.clone());
    }
    out
}

fn data_error(utt_id: &str, detail: &str) -> CoreError {
    CoreError::Data {
        detail: format!("utterance {utt_id}: {detail}"),
    }
}

/// Expands labeled conversations into per-word samples. Unlabeled words and
/// malformed streams are errors; run the labeler first.
pub fn build_samples(
    conversations: &[Conversation],
    vocab: &Vocab,
    spec: &FrameSpec,
) -> Result<Vec<Sample>> {
    if spec.video_window == 0 {
        return Err(CoreError::Config {
            detail: format!("video window must be at least 1"),
        });
    }
    let mut samples = Vec::new();
    for conv in conversations {
        for utt in &conv.utterances {
            if utt.words.is_empty() {
                return Err(data_error(&utt.utt_id, "no words"));
            }
            if let Some(audio) = &utt.audio_frames {
                if audio.len() != utt.words.len() {
                    return Err(data_error(
                        &utt.utt_id,
                        &format!(
                            "expected one audio frame per word ({} words, {} frames)",
                            utt.words.len(),
                            audio.len()
                        ),
                    ));
                }
                for f in audio {
                    if f.len() != spec.audio_width {
                        return Err(CoreError::DimMismatch {
                            what: "audio frame width",
                            expected: spec.audio_width,
                            actual: f.len(),
                        });
                    }
                }
            }
            if let Some(video) = &utt.video_frames {
                let mut prev = f64::NEG_INFINITY;
                for f in video {
                    if f.values.len() != spec.video_width {
                        return Err(CoreError::DimMismatch {
                            what: "video frame width",
                            expected: spec.video_width,
                            actual: f.values.len(),
                        });
                    }
                    if f.t < prev {
                        return Err(data_error(&utt.utt_id, "video frames out of time order"));
                    }
                    prev = f.t;
                }
            }
            let mask = ModalityMask {
                text: true,
                audio: utt.audio_frames.is_some(),
                video: utt.video_frames.is_some(),
            };
            let mut tokens: Vec<u32> = Vec::with_capacity(utt.words.len());
            for (i, word) in utt.words.iter().enumerate() {
                let label = word.label.ok_or_else(|| {
                    data_error(&utt.utt_id, &format!("word {i} has no label"))
                })?;
                tokens.push(vocab.id(&word.text));
                let audio = utt
                    .audio_frames
                    .as_ref()
                    .map(|frames| frames[..=i].to_vec());
                let video = utt.video_frames.as_ref().map(|frames| {
                    video_window(frames, word.t_end, spec.video_window, spec.video_width)
                });
                samples.push(Sample {
                    conv_id: conv.conv_id.clone(),
                    utt_id: utt.utt_id.clone(),
                    word_idx: i,
                    label,
                    tokens: tokens.clone(),
                    audio,
                    video,
                    mask,
                });
            }
        }
    }
    Ok(samples)
}
