//! Synthetic dyadic conversations from a fully known generative process.
//!
//! Every word frame draws its action label iid from the class priors. KEEP
//! and TURN words extend the floor-holder's current utterance (TURN also
//! closes it and passes the floor); BACKCHANNEL emits a one-word utterance by
//! the other speaker placed strictly inside the floor-holder's current word
//! span, so the annotation rules' overlap predicate holds by construction.
//! Each modality then draws its surface form independently: with the
//! cue-presence probability it carries the class-conditional signal (a cue
//! token, or a Gaussian around the class mean), otherwise the neutral signal
//! (a non-cue token, or a zero-mean Gaussian). Because the process is known
//! exactly, the Bayes-optimal posterior is available in closed form.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dialogue::{Action, Conversation, Utterance, VideoFrame, WordFrame};
use crate::error::{CoreError, Result};
use crate::fusion::{ActionDistribution, ModalityMask};
use crate::manifest::{ManifestHeader, SCHEMA_VERSION};
use crate::rng::Rng;
use crate::sample::Sample;
use crate::vocab::Vocab;

/// Eight cue tokens per class; the sets are disjoint and the BACKCHANNEL cues
/// all sit inside the default backchannel vocabulary.
pub fn cue_words(a: Action) -> &'static [&'static str; 8] {
    match a {
        Action::Keep => &[
            "and", "so", "because", "like", "well", "just", "maybe", "actually",
        ],
        Action::Turn => &[
            "thanks", "goodbye", "done", "tonight", "question", "period", "anyway", "alright",
        ],
        Action::Backchannel => &[
            "yeah", "hmm", "mhm", "right", "okay", "wow", "really", "sure",
        ],
    }
}

/// The 26 neutral tokens. None of them match the default backchannel
/// vocabulary (also not as part of a multi-word phrase), so a neutral word can
/// never flip a label.
pub fn neutral_words() -> &'static [&'static str; 26] {
    &[
        "about", "after", "again", "budget", "coffee", "dinner", "evening", "friend", "garden",
        "house", "idea", "kitchen", "letter", "morning", "movie", "number", "office", "people",
        "project", "report", "school", "station", "summer", "table", "window", "winter",
    ]
}

/// The full 50-word generator inventory as a deterministic vocabulary
/// (sorted, with the unknown slot at id 0). Samples fed to the Bayes oracle
/// must be tokenized with this vocabulary.
pub fn synthetic_vocab() -> Vocab {
    let mut words: Vec<&'static str> = Vec::with_capacity(50);
    for a in Action::ALL {
        words.extend(cue_words(a).iter());
    }
    words.extend(neutral_words().iter());
    words.sort_unstable();
    Vocab::from_words(words).expect("inventory words are distinct")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Total word-frame target; generation stops at the first conversation
    /// boundary at or past it.
    pub n_words: usize,
    pub words_per_conversation: usize,
    /// KEEP, TURN, BACKCHANNEL.
    pub priors: [f64; 3],
    /// Per-modality probability that the class-conditional signal is present.
    pub cue_prob: f64,
    pub sigma: f64,
    pub audio_width: usize,
    pub video_width: usize,
    /// Video frames emitted per word (identical replicas spread over the
    /// word's span).
    pub video_frames_per_word: usize,
    /// Video window length, carried into the manifest header.
    pub video_window: usize,
    pub vocab_size: usize,
    /// Class-conditional means, 3 rows of audio_width / video_width.
    pub audio_means: Vec<Vec<f64>>,
    pub video_means: Vec<Vec<f64>>,
    pub seed: u64,
}

fn orthogonal_means(width: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..3)
        .map(|c| {
            let mut m = vec![0.0; width];
            m[c] = scale;
            m
        })
        .collect()
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_words: 2000,
            words_per_conversation: 50,
            priors: [0.7, 0.2, 0.1],
            cue_prob: 0.6,
            sigma: 1.0,
            audio_width: 16,
            video_width: 16,
            video_frames_per_word: 8,
            video_window: 16,
            vocab_size: 50,
            // Scale 4 keeps the text-free masks competitive: at 2 the
            // audio+video pair tops out well below text alone.
            audio_means: orthogonal_means(16, 4.0),
            video_means: orthogonal_means(16, 4.0),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |detail: String| Err(CoreError::Config { detail });
        let sum: f64 = self.priors.iter().sum();
        if self.priors.iter().any(|&p| p <= 0.0) || libm::fabs(sum - 1.0) > 1e-9 {
            return err(format!("priors must be positive and sum to 1, got {:?}", self.priors));
        }
        if !(0.0..=1.0).contains(&self.cue_prob) {
            return err(format!("cue_prob must lie in [0, 1], got {}", self.cue_prob));
        }
        if self.sigma <= 0.0 {
            return err(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.audio_width < 3 || self.video_width < 3 {
            return err("feature widths must be at least 3 (one mean axis per class)".to_string());
        }
        if self.video_frames_per_word == 0 || self.video_window == 0 {
            return err("video_frames_per_word and video_window must be at least 1".to_string());
        }
        if self.words_per_conversation == 0 || self.n_words == 0 {
            return err("word counts must be positive".to_string());
        }
        let inventory = 3 * 8 + neutral_words().len();
        if self.vocab_size != inventory {
            return err(format!(
                "vocab_size must equal the generator inventory size {inventory}, got {}",
                self.vocab_size
            ));
        }
        for (name, means, width) in [
            ("audio_means", &self.audio_means, self.audio_width),
            ("video_means", &self.video_means, self.video_width),
        ] {
            if means.len() != 3 || means.iter().any(|m| m.len() != width) {
                return err(format!("{name} must be 3 vectors of width {width}"));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> ManifestHeader {
        ManifestHeader {
            schema_version: SCHEMA_VERSION,
            audio_width: self.audio_width,
            video_width: self.video_width,
            n: self.video_window,
        }
    }
}

/// The latent choices behind one generated word, in placement order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub conv_id: String,
    pub utt_id: String,
    pub word_idx: usize,
    pub label: Action,
    pub text_cue: bool,
    pub audio_cue: bool,
    pub video_cue: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub header: ManifestHeader,
    pub conversations: Vec<Conversation>,
    pub latents: Vec<Latent>,
}

/// The hidden generator record: the config on the first line, one latent
/// record per line after it.
pub fn write_hidden(cfg: &SyntheticConfig, latents: &[Latent]) -> String {
    let mut out = serde_json::to_string(cfg).expect("config serializes");
    out.push('\n');
    for l in latents {
        out.push_str(&serde_json::to_string(l).expect("latent serializes"));
        out.push('\n');
    }
    out
}

struct Payload {
    word: &'static str,
    text_cue: bool,
    audio: Vec<f64>,
    audio_cue: bool,
    video: Vec<f64>,
    video_cue: bool,
    label: Action,
}

fn draw_label(rng: &mut Rng, priors: &[f64; 3]) -> Action {
    let u = rng.uniform(0.0, 1.0);
    if u < priors[0] {
        Action::Keep
    } else if u < priors[0] + priors[1] {
        Action::Turn
    } else {
        Action::Backchannel
    }
}

fn draw_gauss(rng: &mut Rng, mean: Option<&[f64]>, sigma: f64, width: usize) -> Vec<f64> {
    (0..width)
        .map(|i| mean.map_or(0.0, |m| m[i]) + sigma * rng.normal())
        .collect()
}

/// Fixed draw order per word: label, text cue flag, token index, audio cue
/// flag, audio noise, video cue flag, video noise. Structural timing draws
/// follow. This order is part of the determinism contract.
fn draw_payload(rng: &mut Rng, cfg: &SyntheticConfig, label: Action) -> Payload {
    let text_cue = rng.chance(cfg.cue_prob);
    let word = if text_cue {
        cue_words(label)[rng.below(8)]
    } else {
        neutral_words()[rng.below(neutral_words().len())]
    };
    let audio_cue = rng.chance(cfg.cue_prob);
    let audio_mean = audio_cue.then(|| cfg.audio_means[label.index()].as_slice());
    let audio = draw_gauss(rng, audio_mean, cfg.sigma, cfg.audio_width);
    let video_cue = rng.chance(cfg.cue_prob);
    let video_mean = video_cue.then(|| cfg.video_means[label.index()].as_slice());
    let video = draw_gauss(rng, video_mean, cfg.sigma, cfg.video_width);
    Payload {
        word,
        text_cue,
        audio,
        audio_cue,
        video,
        video_cue,
        label,
    }
}

/// Evenly spread identical replicas across the word span; every timestamp is
/// strictly inside (t_start, t_end].
fn video_frames_for_word(cfg: &SyntheticConfig, t_start: f64, t_end: f64, values: &[f64]) -> Vec<VideoFrame> {
    let k = cfg.video_frames_per_word;
    (0..k)
        .map(|j| VideoFrame {
            t: t_start + (t_end - t_start) * (j as f64 + 1.0) / k as f64,
            values: values.to_vec(),
        })
        .collect()
}

/// Successive backchannels against the same host word take the first half of
/// the remaining slot, so any number of them nest inside the word without
/// overlapping each other.
fn alloc_bc_span(slot: &mut (f64, f64)) -> (f64, f64) {
    let (a, b) = *slot;
    let width = b - a;
    if width < 1e-9 {
        return (a, b);
    }
    let mid = a + 0.5 * width;
    let margin = 0.1 * (mid - a);
    *slot = (mid, b);
    (a + margin, mid - margin)
}

struct ConvState {
    utterances: Vec<Utterance>,
    latents: Vec<Latent>,
    open: Option<usize>,
    floor: usize,
    t: f64,
    bc_slot: (f64, f64),
    utt_count: usize,
}

fn speaker_name(i: usize) -> String {
    format!("s{i}")
}

fn place_bc(state: &mut ConvState, conv_id: &str, cfg: &SyntheticConfig, pay: Payload) {
    let (t0, t1) = alloc_bc_span(&mut state.bc_slot);
    let utt_id = format!("{conv_id}-u{:03}", state.utt_count);
    state.utt_count += 1;
    let word = WordFrame {
        text: pay.word.to_string(),
        t_start: t0,
        t_end: t1,
        label: Some(Action::Backchannel),
    };
    state.latents.push(Latent {
        conv_id: conv_id.to_string(),
        utt_id: utt_id.clone(),
        word_idx: 0,
        label: pay.label,
        text_cue: pay.text_cue,
        audio_cue: pay.audio_cue,
        video_cue: pay.video_cue,
    });
    state.utterances.push(Utterance {
        utt_id,
        speaker: speaker_name(1 - state.floor),
        words: vec![word],
        audio_frames: Some(vec![pay.audio]),
        video_frames: Some(video_frames_for_word(cfg, t0, t1, &pay.video)),
    });
}

fn gen_conversation(
    rng: &mut Rng,
    cfg: &SyntheticConfig,
    conv_index: usize,
    target_words: usize,
) -> (Conversation, Vec<Latent>, usize) {
    let conv_id = format!("c{conv_index:04}");
    let mut state = ConvState {
        utterances: Vec::new(),
        latents: Vec::new(),
        open: None,
        floor: 0,
        t: 0.0,
        bc_slot: (0.0, 0.0),
        utt_count: 0,
    };
    let mut pending: Vec<Payload> = Vec::new();
    let mut emitted = 0usize;

    while emitted < target_words || state.open.is_some() || !pending.is_empty() {
        let label = draw_label(rng, &cfg.priors);
        let pay = draw_payload(rng, cfg, label);
        emitted += 1;
        if label == Action::Backchannel {
            if state.open.is_some() {
                place_bc(&mut state, &conv_id, cfg, pay);
            } else {
                pending.push(pay);
            }
            continue;
        }
        let dur = rng.uniform(0.2, 0.45);
        let (idx, word_idx) = match state.open {
            Some(idx) => (idx, state.utterances[idx].words.len()),
            None => {
                state.t += rng.uniform(0.1, 0.3);
                let utt_id = format!("{conv_id}-u{:03}", state.utt_count);
                state.utt_count += 1;
                state.utterances.push(Utterance {
                    utt_id,
                    speaker: speaker_name(state.floor),
                    words: Vec::new(),
                    audio_frames: Some(Vec::new()),
                    video_frames: Some(Vec::new()),
                });
                let idx = state.utterances.len() - 1;
                state.open = Some(idx);
                (idx, 0)
            }
        };
        let (t0, t1) = (state.t, state.t + dur);
        state.t = t1;
        {
            let utt = &mut state.utterances[idx];
            utt.words.push(WordFrame {
                text: pay.word.to_string(),
                t_start: t0,
                t_end: t1,
                label: Some(label),
            });
            utt.audio_frames.as_mut().unwrap().push(pay.audio);
            utt.video_frames
                .as_mut()
                .unwrap()
                .extend(video_frames_for_word(cfg, t0, t1, &pay.video));
            state.latents.push(Latent {
                conv_id: conv_id.clone(),
                utt_id: utt.utt_id.clone(),
                word_idx,
                label,
                text_cue: pay.text_cue,
                audio_cue: pay.audio_cue,
                video_cue: pay.video_cue,
            });
        }
        // Backchannels drawn between utterances attach to the first word of
        // the next one.
        state.bc_slot = (t0 + 0.05 * dur, t1 - 0.05 * dur);
        for bc in pending.drain(..) {
            place_bc(&mut state, &conv_id, cfg, bc);
        }
        if label == Action::Turn {
            state.open = None;
            state.floor = 1 - state.floor;
        }
    }

    let mut speakers: Vec<String> = Vec::new();
    for u in &state.utterances {
        if !speakers.contains(&u.speaker) {
            speakers.push(u.speaker.clone());
        }
    }
    (
        Conversation {
            conv_id,
            speakers,
            utterances: state.utterances,
        },
        state.latents,
        emitted,
    )
}

/// Generates conversations until the total word count reaches cfg.n_words.
/// Same config implies a bit-identical result.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let mut conversations = Vec::new();
    let mut latents = Vec::new();
    let mut total = 0usize;
    while total < cfg.n_words {
        let remaining = cfg.n_words - total;
        let target = cfg.words_per_conversation.min(remaining);
        let (conv, mut lat, emitted) =
            gen_conversation(&mut rng, cfg, conversations.len(), target);
        conversations.push(conv);
        latents.append(&mut lat);
        total += emitted;
    }
    Ok(SyntheticData {
        header: cfg.header(),
        conversations,
        latents,
    })
}

fn normal_density(x: &[f64], mean: Option<&[f64]>, sigma: f64) -> f64 {
    let mut ss = 0.0;
    for (i, xi) in x.iter().enumerate() {
        let m = mean.map_or(0.0, |mv| mv[i]);
        ss += (xi - m) * (xi - m);
    }
    let d = x.len() as f64;
    libm::exp(-ss / (2.0 * sigma * sigma))
        * libm::pow(2.0 * core::f64::consts::PI * sigma * sigma, -d / 2.0)
}

fn text_likelihood(cfg: &SyntheticConfig, word: &str, label: Action) -> f64 {
    if cue_words(label).contains(&word) {
        cfg.cue_prob / 8.0
    } else if neutral_words().contains(&word) {
        (1.0 - cfg.cue_prob) / neutral_words().len() as f64
    } else {
        0.0
    }
}

fn mixture_density(x: &[f64], mean: &[f64], cfg: &SyntheticConfig) -> f64 {
    cfg.cue_prob * normal_density(x, Some(mean), cfg.sigma)
        + (1.0 - cfg.cue_prob) * normal_density(x, None, cfg.sigma)
}

/// Exact posterior over actions given the masked modalities of one sample.
/// The label only influences the current word's surface forms, so the
/// posterior conditions on the final token, the final audio frame, and the
/// final video frame. The sample must be tokenized with synthetic_vocab().
/// An empty mask returns the prior.
pub fn bayes_oracle(
    sample: &Sample,
    mask: ModalityMask,
    cfg: &SyntheticConfig,
    vocab: &Vocab,
) -> Result<ActionDistribution> {
    let available = sample.mask.intersect(&mask);
    if available != mask {
        return Err(CoreError::MaskMismatch {
            detail: format!(
                "oracle mask {} requests modalities the sample lacks ({})",
                mask.letters(),
                sample.mask.letters()
            ),
        });
    }
    if mask.is_empty() {
        return ActionDistribution::from_probs(&cfg.priors);
    }
    let mut post = [cfg.priors[0], cfg.priors[1], cfg.priors[2]];
    if mask.text {
        let token = *sample.tokens.last().ok_or(CoreError::EmptyInput {
            what: "sample tokens",
        })?;
        let word = vocab.word(token)?;
        for (i, p) in post.iter_mut().enumerate() {
            *p *= text_likelihood(cfg, word, Action::from_index(i)?);
        }
    }
    if mask.audio {
        let frame = sample
            .audio
            .as_ref()
            .and_then(|f| f.last())
            .ok_or(CoreError::EmptyInput {
                what: "sample audio frames",
            })?;
        for (i, p) in post.iter_mut().enumerate() {
            *p *= mixture_density(frame, &cfg.audio_means[i], cfg);
        }
    }
    if mask.video {
        let frame = sample
            .video
            .as_ref()
            .and_then(|f| f.last())
            .ok_or(CoreError::EmptyInput {
                what: "sample video frames",
            })?;
        for (i, p) in post.iter_mut().enumerate() {
            *p *= mixture_density(frame, &cfg.video_means[i], cfg);
        }
    }
    let sum: f64 = post.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(CoreError::NonFinite {
            what: "bayes posterior normalizer",
        });
    }
    for p in post.iter_mut() {
        *p /= sum;
    }
    ActionDistribution::from_probs(&post)
}
