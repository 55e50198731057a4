//! Model assembly: the three encoders plus the fusion stack, and inference
//! routing.
//!
//! A bundle holds everything a checkpoint needs to reproduce predictions:
//! architecture config, vocabulary, stage provenance flags, per-modality
//! encoder parameters (each with its own uni-modal head), and the fusion
//! parameters. Inference on a single modality routes through that encoder's
//! stage-1 head; two or more modalities route through fusion.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    encode, init_recurrent, EncoderDims, EncoderInput, EncoderParams, Modality,
};
use crate::error::{CoreError, Result};
use crate::fusion::{fuse, predict as fusion_predict, ActionDistribution, FusionParams, ModalityMask};
use crate::loss::softmax;
use crate::opt::Parameters;
use crate::rng::Rng;
use crate::sample::{FrameSpec, Sample};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    /// Encoder output width d_k, shared by all three modalities.
    pub feature_width: usize,
    /// Fused width d_h.
    pub fusion_width: usize,
    pub rank: usize,
    pub head_hidden: usize,
    pub audio_width: usize,
    pub video_width: usize,
    pub video_window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            encoder_hidden: 64,
            feature_width: 64,
            fusion_width: 256,
            rank: 16,
            head_hidden: 64,
            audio_width: 16,
            video_width: 16,
            video_window: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("feature_width", self.feature_width),
            ("fusion_width", self.fusion_width),
            ("rank", self.rank),
            ("head_hidden", self.head_hidden),
            ("audio_width", self.audio_width),
            ("video_width", self.video_width),
            ("video_window", self.video_window),
        ] {
            if v == 0 {
                return Err(CoreError::Config {
                    detail: format!("{name} must be at least 1"),
                });
            }
        }
        Ok(())
    }

    pub fn frame_spec(&self) -> FrameSpec {
        FrameSpec {
            audio_width: self.audio_width,
            video_width: self.video_width,
            video_window: self.video_window,
        }
    }

    /// Widths for one modality's recurrent encoder.
    pub fn encoder_dims(&self, modality: Modality, vocab_len: usize) -> EncoderDims {
        let (vocab, in_width) = match modality {
            Modality::Text => (Some(vocab_len), self.embed_dim),
            Modality::Audio => (None, self.audio_width),
            Modality::Video => (None, self.video_width),
        };
        EncoderDims {
            vocab,
            in_width,
            hidden: self.encoder_hidden,
            out_width: self.feature_width,
            head_hidden: self.head_hidden,
        }
    }
}

/// Which training stages have touched this bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainedStages {
    pub text: bool,
    pub audio: bool,
    pub video: bool,
    pub joint: bool,
}

impl TrainedStages {
    pub fn stage1_complete(&self) -> bool {
        self.text && self.audio && self.video
    }

    pub fn set_stage1(&mut self, m: Modality) {
        match m {
            Modality::Text => self.text = true,
            Modality::Audio => self.audio = true,
            Modality::Video => self.video = true,
        }
    }

    pub fn stage1(&self, m: Modality) -> bool {
        match m {
            Modality::Text => self.text,
            Modality::Audio => self.audio,
            Modality::Video => self.video,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub stages: TrainedStages,
    pub text: EncoderParams,
    pub audio: EncoderParams,
    pub video: EncoderParams,
    pub fusion: FusionParams,
}

impl ModelBundle {
    /// Fresh bundle from one RNG stream. Initialization order is fixed (text,
    /// audio, video, fusion) and is part of the determinism contract.
    pub fn init(config: &ModelConfig, vocab: &Vocab, rng: &mut Rng) -> Result<ModelBundle> {
        config.validate()?;
        let text = init_recurrent(Modality::Text, config.encoder_dims(Modality::Text, vocab.len()), rng);
        let audio = init_recurrent(Modality::Audio, config.encoder_dims(Modality::Audio, 0), rng);
        let video = init_recurrent(Modality::Video, config.encoder_dims(Modality::Video, 0), rng);
        let fusion = FusionParams::init(
            config.rank,
            config.fusion_width,
            [config.feature_width; 3],
            config.head_hidden,
            rng,
        );
        Ok(ModelBundle {
            config: *config,
            vocab: vocab.clone(),
            stages: TrainedStages::default(),
            text,
            audio,
            video,
            fusion,
        })
    }

    pub fn encoder(&self, m: Modality) -> &EncoderParams {
        match m {
            Modality::Text => &self.text,
            Modality::Audio => &self.audio,
            Modality::Video => &self.video,
        }
    }

    pub fn encoder_mut(&mut self, m: Modality) -> &mut EncoderParams {
        match m {
            Modality::Text => &mut self.text,
            Modality::Audio => &mut self.audio,
            Modality::Video => &mut self.video,
        }
    }

    /// Swaps in a stage-1 trained encoder and records its stage flag. The
    /// replacement's feature width must match the fusion input width.
    pub fn install_encoder(&mut self, params: EncoderParams) -> Result<()> {
        if params.out_width() != self.config.feature_width {
            return Err(CoreError::DimMismatch {
                what: "installed encoder feature width",
                expected: self.config.feature_width,
                actual: params.out_width(),
            });
        }
        let m = params.modality;
        *self.encoder_mut(m) = params;
        self.stages.set_stage1(m);
        Ok(())
    }

    /// Zero-valued clone with identical shapes, for gradient accumulation.
    pub fn zeros_like(&self) -> ModelBundle {
        ModelBundle {
            config: self.config,
            vocab: self.vocab.clone(),
            stages: self.stages,
            text: crate::encoder::zeros_like(&self.text),
            audio: crate::encoder::zeros_like(&self.audio),
            video: crate::encoder::zeros_like(&self.video),
            fusion: self.fusion.zeros_like(),
        }
    }

    /// Width-consistency invariant: every encoder's feature width equals the
    /// matching fusion input width.
    pub fn check_consistency(&self) -> Result<()> {
        self.config.validate()?;
        for m in Modality::ALL {
            let enc = self.encoder(m).out_width();
            let fus = self.fusion.in_width(m);
            if enc != fus {
                return Err(CoreError::DimMismatch {
                    what: "encoder feature width vs fusion input width",
                    expected: fus,
                    actual: enc,
                });
            }
            if self.encoder(m).modality != m {
                return Err(CoreError::Data {
                    detail: format!("encoder slot {} holds a different modality", m.name()),
                });
            }
        }
        if self.fusion.d_h != self.config.fusion_width {
            return Err(CoreError::DimMismatch {
                what: "fusion width vs config",
                expected: self.config.fusion_width,
                actual: self.fusion.d_h,
            });
        }
        Ok(())
    }
}

/// Parameter walk order: text encoder, audio encoder, video encoder, fusion.
impl Parameters for ModelBundle {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.text.tensors();
        out.extend(self.audio.tensors());
        out.extend(self.video.tensors());
        out.extend(self.fusion.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.text.tensors_mut();
        out.extend(self.audio.tensors_mut());
        out.extend(self.video.tensors_mut());
        out.extend(self.fusion.tensors_mut());
        out
    }
}

/// Borrows the right slice of a sample for one modality's encoder.
pub fn encoder_input<'a>(sample: &'a Sample, m: Modality) -> Result<EncoderInput<'a>> {
    let missing = || CoreError::MaskMismatch {
        detail: format!(
            "sample {}[{}] does not carry {}",
            sample.utt_id,
            sample.word_idx,
            m.name()
        ),
    };
    match m {
        Modality::Text => Ok(EncoderInput::Tokens(&sample.tokens)),
        Modality::Audio => sample
            .audio
            .as_deref()
            .map(EncoderInput::Frames)
            .ok_or_else(missing),
        Modality::Video => sample
            .video
            .as_deref()
            .map(EncoderInput::Frames)
            .ok_or_else(missing),
    }
}

/// Features for every modality in the mask, in modality order.
pub fn encode_masked(
    bundle: &ModelBundle,
    sample: &Sample,
    mask: ModalityMask,
) -> Result<[Option<Vec<f64>>; 3]> {
    let mut zs: [Option<Vec<f64>>; 3] = [None, None, None];
    for m in Modality::ALL {
        if mask.contains(m) {
            let (z, _) = encode(bundle.encoder(m), encoder_input(sample, m)?)?;
            zs[m.index()] = Some(z);
        }
    }
    Ok(zs)
}

/// Distribution from already-encoded features. Exactly one present modality
/// routes through that encoder's stage-1 head; two or more route through
/// fusion. Feature presence must match the mask.
pub fn predict_from_features(
    bundle: &ModelBundle,
    zs: &[Option<Vec<f64>>; 3],
    mask: ModalityMask,
) -> Result<ActionDistribution> {
    if mask.is_empty() {
        return Err(CoreError::NoModalities);
    }
    for m in Modality::ALL {
        if mask.contains(m) != zs[m.index()].is_some() {
            return Err(CoreError::MaskMismatch {
                detail: format!(
                    "mask {} disagrees with feature presence for {}",
                    mask.letters(),
                    m.name()
                ),
            });
        }
    }
    if mask.count() == 1 {
        let m = Modality::ALL.into_iter().find(|&m| mask.contains(m)).unwrap();
        let z = zs[m.index()].as_deref().unwrap();
        let (logits, _) = bundle.encoder(m).head.forward(z)?;
        return ActionDistribution::from_probs(&softmax(&logits));
    }
    let (h, _) = fuse(
        &bundle.fusion,
        zs[0].as_deref(),
        zs[1].as_deref(),
        zs[2].as_deref(),
        mask,
    )?;
    let (dist, _) = fusion_predict(&bundle.fusion, &h)?;
    Ok(dist)
}

/// Inference distribution for one sample under a modality mask. The mask
/// must be a subset of what the sample carries.
pub fn predict_sample(
    bundle: &ModelBundle,
    sample: &Sample,
    mask: ModalityMask,
) -> Result<ActionDistribution> {
    if mask.is_empty() {
        return Err(CoreError::NoModalities);
    }
    if mask.intersect(&sample.mask) != mask {
        return Err(CoreError::MaskMismatch {
            detail: format!(
                "requested {} but sample {}[{}] carries {}",
                mask.letters(),
                sample.utt_id,
                sample.word_idx,
                sample.mask.letters()
            ),
        });
    }
    let zs = encode_masked(bundle, sample, mask)?;
    predict_from_features(bundle, &zs, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::Action;
    use crate::loss::softmax;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            encoder_hidden: 5,
            feature_width: 6,
            fusion_width: 7,
            rank: 2,
            head_hidden: 5,
            audio_width: 3,
            video_width: 3,
            video_window: 4,
        }
    }

    fn tiny_vocab() -> Vocab {
        Vocab::from_words(["alpha", "beta", "gamma"]).unwrap()
    }

    fn tri_sample() -> Sample {
        Sample {
            conv_id: "c".into(),
            utt_id: "c-u0".into(),
            word_idx: 1,
            label: Action::Keep,
            tokens: alloc::vec![1, 2],
            audio: Some(alloc::vec![alloc::vec![0.1, -0.2, 0.3], alloc::vec![0.0, 0.5, -0.1]]),
            video: Some(alloc::vec![alloc::vec![0.2, 0.1, 0.0]; 4]),
            mask: ModalityMask::FULL,
        }
    }

    #[test]
    fn init_is_deterministic_and_consistent() {
        let cfg = tiny_config();
        let vocab = tiny_vocab();
        let a = ModelBundle::init(&cfg, &vocab, &mut Rng::new(9)).unwrap();
        let b = ModelBundle::init(&cfg, &vocab, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        a.check_consistency().unwrap();
        assert!(!a.stages.stage1_complete());
    }

    #[test]
    fn parameter_walk_covers_every_group_once() {
        let cfg = tiny_config();
        let bundle = ModelBundle::init(&cfg, &tiny_vocab(), &mut Rng::new(1)).unwrap();
        let want = bundle.text.flat_len()
            + bundle.audio.flat_len()
            + bundle.video.flat_len()
            + bundle.fusion.flat_len();
        assert_eq!(bundle.flat_len(), want);
        let zeros = bundle.zeros_like();
        assert_eq!(zeros.flat_len(), want);
        assert!(zeros.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn uni_modal_prediction_routes_through_stage1_head() {
        let cfg = tiny_config();
        let bundle = ModelBundle::init(&cfg, &tiny_vocab(), &mut Rng::new(2)).unwrap();
        let s = tri_sample();
        let via_routing = predict_sample(&bundle, &s, ModalityMask::single(Modality::Audio)).unwrap();
        // Direct stage-1 computation.
        let (z, _) = encode(&bundle.audio, EncoderInput::Frames(s.audio.as_deref().unwrap())).unwrap();
        let (logits, _) = bundle.audio.head.forward(&z).unwrap();
        let direct = ActionDistribution::from_probs(&softmax(&logits)).unwrap();
        assert_eq!(via_routing, direct);
    }

    #[test]
    fn multi_modal_prediction_routes_through_fusion() {
        let cfg = tiny_config();
        let bundle = ModelBundle::init(&cfg, &tiny_vocab(), &mut Rng::new(3)).unwrap();
        let s = tri_sample();
        let full = predict_sample(&bundle, &s, ModalityMask::FULL).unwrap();
        let zs = encode_masked(&bundle, &s, ModalityMask::FULL).unwrap();
        let (h, _) = fuse(
            &bundle.fusion,
            zs[0].as_deref(),
            zs[1].as_deref(),
            zs[2].as_deref(),
            ModalityMask::FULL,
        )
        .unwrap();
        let (direct, _) = fusion_predict(&bundle.fusion, &h).unwrap();
        assert_eq!(full, direct);
        // Probabilities are a distribution.
        let sum: f64 = full.as_array().iter().sum();
        assert!(libm::fabs(sum - 1.0) < 1e-12);
    }

    #[test]
    fn prediction_rejects_unavailable_modalities() {
        let cfg = tiny_config();
        let bundle = ModelBundle::init(&cfg, &tiny_vocab(), &mut Rng::new(4)).unwrap();
        let mut s = tri_sample();
        s.audio = None;
        s.mask.audio = false;
        let err = predict_sample(&bundle, &s, ModalityMask::FULL).unwrap_err();
        assert!(matches!(err, CoreError::MaskMismatch { .. }));
        let empty = ModalityMask {
            text: false,
            audio: false,
            video: false,
        };
        assert!(matches!(
            predict_sample(&bundle, &s, empty).unwrap_err(),
            CoreError::NoModalities
        ));
    }

    #[test]
    fn install_encoder_checks_width_and_sets_flag() {
        let cfg = tiny_config();
        let vocab = tiny_vocab();
        let mut bundle = ModelBundle::init(&cfg, &vocab, &mut Rng::new(5)).unwrap();
        let good = init_recurrent(
            Modality::Audio,
            cfg.encoder_dims(Modality::Audio, 0),
            &mut Rng::new(6),
        );
        bundle.install_encoder(good).unwrap();
        assert!(bundle.stages.audio && !bundle.stages.text);
        let bad = init_recurrent(
            Modality::Video,
            EncoderDims {
                vocab: None,
                in_width: 3,
                hidden: 5,
                out_width: 9,
                head_hidden: 5,
            },
            &mut Rng::new(7),
        );
        assert!(bundle.install_encoder(bad).is_err());
    }

    #[test]
    fn serde_round_trip_preserves_bundle_exactly() {
        let cfg = tiny_config();
        let bundle = ModelBundle::init(&cfg, &tiny_vocab(), &mut Rng::new(8)).unwrap();
        let text = serde_json::to_string(&bundle).unwrap();
        let back: ModelBundle = serde_json::from_str(&text).unwrap();
        assert_eq!(bundle, back);
        assert_eq!(text, serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn zero_width_config_is_rejected() {
        let mut cfg = tiny_config();
        cfg.rank = 0;
        assert!(ModelBundle::init(&cfg, &tiny_vocab(), &mut Rng::new(1)).is_err());
    }
}
