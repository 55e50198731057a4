//! Incremental per-frame prediction with per-utterance context.
//!
//! One word frame arrives at a time: a token, optionally one audio frame,
//! optionally one video frame. The text and audio encoders advance recurrent
//! state incrementally (their pooled features are bit-identical to a batch
//! pass over the prefix); video keeps the most recent window-many frames and
//! re-encodes the padded window. The modality mask for each prediction is
//! inferred from what the current frame carries, so feeding the same frames
//! one at a time or replaying the full prefix from scratch yields identical
//! probabilities.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dialogue::Action;
use crate::encoder::{encode, EncoderCore, EncoderInput, Modality, RecurrentStreamState};
use crate::error::{CoreError, Result};
use crate::fusion::{ActionDistribution, ModalityMask};
use crate::model::{predict_from_features, ModelBundle};

fn recurrent_core<'a>(bundle: &'a ModelBundle, m: Modality) -> Result<&'a crate::encoder::RecurrentCore> {
    match &bundle.encoder(m).core {
        EncoderCore::Recurrent(c) => Ok(c),
        EncoderCore::Passthrough { .. } => Err(CoreError::Data {
            detail: alloc::format!(
                "streaming requires a recurrent {} encoder, not precomputed features",
                m.name()
            ),
        }),
    }
}

/// Per-utterance context for streaming prediction.
#[derive(Debug, Clone)]
pub struct StreamState {
    text: RecurrentStreamState,
    audio: RecurrentStreamState,
    /// Most recent video frames, capped at the window length.
    video: VecDeque<Vec<f64>>,
    window: usize,
    video_width: usize,
    audio_width: usize,
    hidden: usize,
}

impl StreamState {
    pub fn new(bundle: &ModelBundle) -> StreamState {
        let cfg = &bundle.config;
        StreamState {
            text: RecurrentStreamState::new(cfg.encoder_hidden),
            audio: RecurrentStreamState::new(cfg.encoder_hidden),
            video: VecDeque::with_capacity(cfg.video_window),
            window: cfg.video_window,
            video_width: cfg.video_width,
            audio_width: cfg.audio_width,
            hidden: cfg.encoder_hidden,
        }
    }

    /// Drops all context; the next frame starts a fresh utterance.
    pub fn reset(&mut self) {
        self.text = RecurrentStreamState::new(self.hidden);
        self.audio = RecurrentStreamState::new(self.hidden);
        self.video.clear();
    }

    /// Frames consumed since the last reset.
    pub fn len(&self) -> usize {
        self.text.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The video window in batch layout: left-padded by repeating the
    /// earliest retained frame up to the window length.
    fn padded_window(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.window);
        match self.video.front() {
            None => return vec![vec![0.0; self.video_width]; self.window],
            Some(first) => {
                for _ in 0..self.window - self.video.len() {
                    out.push(first.clone());
                }
            }
        }
        out.extend(self.video.iter().cloned());
        out
    }

    /// Feeds one word frame and returns its action distribution. The mask is
    /// inferred from which fields the frame carries; text is the backbone and
    /// is always present.
    pub fn push(
        &mut self,
        bundle: &ModelBundle,
        token: u32,
        audio: Option<&[f64]>,
        video: Option<&[f64]>,
    ) -> Result<ActionDistribution> {
        let text_core = recurrent_core(bundle, Modality::Text)?;
        let audio_core = recurrent_core(bundle, Modality::Audio)?;
        recurrent_core(bundle, Modality::Video)?;

        self.text.step_token(text_core, token)?;
        if let Some(frame) = audio {
            if frame.len() != self.audio_width {
                return Err(CoreError::DimMismatch {
                    what: "streaming audio frame width",
                    expected: self.audio_width,
                    actual: frame.len(),
                });
            }
            self.audio.step_frame(audio_core, frame)?;
        }
        if let Some(frame) = video {
            if frame.len() != self.video_width {
                return Err(CoreError::DimMismatch {
                    what: "streaming video frame width",
                    expected: self.video_width,
                    actual: frame.len(),
                });
            }
            if self.video.len() == self.window {
                self.video.pop_front();
            }
            self.video.push_back(frame.to_vec());
        }

        let mask = ModalityMask {
            text: true,
            audio: audio.is_some(),
            video: video.is_some(),
        };
        let mut zs: [Option<Vec<f64>>; 3] = [None, None, None];
        zs[0] = Some(self.text.z_last(text_core)?);
        if mask.audio {
            zs[1] = Some(self.audio.z_mean(audio_core)?);
        }
        if mask.video {
            let window = self.padded_window();
            let (z, _) = encode(bundle.encoder(Modality::Video), EncoderInput::Frames(&window))?;
            zs[2] = Some(z);
        }
        predict_from_features(bundle, &zs, mask)
    }
}

/// Decision rule: argmax by default. With a threshold set, the corresponding
/// non-Keep decision additionally requires its probability to exceed the
/// threshold, else the decision falls back to Keep.
pub fn decide(dist: &ActionDistribution, tau_turn: Option<f64>, tau_bc: Option<f64>) -> Action {
    let action = dist.argmax();
    match action {
        Action::Turn => match tau_turn {
            Some(tau) if dist.p_turn <= tau => Action::Keep,
            _ => Action::Turn,
        },
        Action::Backchannel => match tau_bc {
            Some(tau) if dist.p_backchannel <= tau => Action::Keep,
            _ => Action::Backchannel,
        },
        Action::Keep => Action::Keep,
    }
}

/// One streaming output record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StreamOutput {
    pub p_keep: f64,
    pub p_turn: f64,
    pub p_bc: f64,
    pub decision: String,
}

impl StreamOutput {
    pub fn new(dist: &ActionDistribution, decision: Action) -> StreamOutput {
        StreamOutput {
            p_keep: dist.p_keep,
            p_turn: dist.p_turn,
            p_bc: dist.p_backchannel,
            decision: String::from(decision.name()),
        }
    }
}
