//! Two-stage training.
//!
//! Stage 1 trains each uni-modal encoder with its own classification head,
//! independently. Stage 2 trains the whole stack end to end: every step draws
//! a random modality dropout mask, fuses whatever survives, and backpropagates
//! cross-entropy through the fusion head, the factors, and all encoders
//! (nothing is frozen). The stage-1 heads sit outside the fused path, so they
//! receive exactly zero gradient during stage 2 and stay bit-identical; they
//! remain the inference route for single-modality masks.
//!
//! Determinism contract: one RNG stream seeded from the config drives
//! initialization, per-epoch shuffles, and per-step dropout draws in a fixed
//! order, so identical (dataset, config, seed) reproduce the checkpoint
//! bit for bit.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, encode_backward, init_recurrent, EncoderParams, Modality};
use crate::error::{CoreError, Result};
use crate::eval::ConfusionMatrix;
use crate::fusion::{fuse, fuse_backward, ModalityMask};
use crate::loss::{softmax, softmax_cross_entropy};
use crate::model::{encoder_input, ModelBundle, ModelConfig};
use crate::opt::{adam_step, AdamConfig, AdamState, Parameters};
use crate::rng::Rng;
use crate::sample::Sample;
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Default suits the synthetic sets; full-scale encoder stacks usually
    /// want far smaller steps (1e-5).
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stage-2 modality dropout probability.
    pub rmdt_prob: f64,
    pub seed: u64,
    /// Which encoders stage-1 training covers; stage 2 ignores it.
    pub modalities: ModalityMask,
    /// Allow stage-2 training on a bundle without stage-1 provenance.
    pub from_scratch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 20,
            batch_size: 1,
            rmdt_prob: 0.1,
            seed: 0,
            modalities: ModalityMask::FULL,
            from_scratch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Config {
                detail: alloc::format!("learning rate must be positive and finite, got {}", self.lr),
            });
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config {
                detail: String::from("batch size must be at least 1"),
            });
        }
        if !(0.0..1.0).contains(&self.rmdt_prob) {
            return Err(CoreError::Config {
                detail: alloc::format!(
                    "dropout probability must lie in [0, 1), got {}",
                    self.rmdt_prob
                ),
            });
        }
        Ok(())
    }
}

/// One structured metrics record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    pub accuracy: f64,
    /// Keep, Turn, Backchannel.
    pub f1: [f64; 3],
    pub macro_f1: f64,
    pub n: usize,
}

/// Dropout mask for one step: with probability `p` exactly one modality
/// (chosen uniformly) is absent, otherwise the mask is full. Never empty.
/// Training configs restrict p < 1; the p = 1 boundary (always a drop) is
/// still well-defined here.
pub fn rmdt_sample(rng: &mut Rng, p: f64) -> ModalityMask {
    let mut mask = ModalityMask::FULL;
    if rng.chance(p) {
        let drop = Modality::ALL[rng.below(3)];
        mask.set(drop, false);
    }
    mask
}

/// One uni-modal forward/backward: encoder, stage-1 head, cross-entropy.
/// Accumulates into `grads` and returns the loss.
fn uni_step(params: &EncoderParams, sample: &Sample, grads: &mut EncoderParams) -> Result<f64> {
    let (z, cache) = encode(params, encoder_input(sample, params.modality)?)?;
    let (logits, head_cache) = params.head.forward(&z)?;
    let (loss, _, grad_logits) = softmax_cross_entropy(&logits, sample.label.index())?;
    let grad_z = params.head.backward(&head_cache, &grad_logits, &mut grads.head);
    encode_backward(params, &cache, &grad_z, grads)?;
    Ok(loss)
}

/// Forward loss of the fused path for one sample under a mask.
pub fn joint_loss(bundle: &ModelBundle, sample: &Sample, mask: ModalityMask) -> Result<f64> {
    let zs = crate::model::encode_masked(bundle, sample, mask)?;
    let (h, _) = fuse(
        &bundle.fusion,
        zs[0].as_deref(),
        zs[1].as_deref(),
        zs[2].as_deref(),
        mask,
    )?;
    let (logits, _) = bundle.fusion.head.forward(&h)?;
    let (loss, _, _) = softmax_cross_entropy(&logits, sample.label.index())?;
    Ok(loss)
}

/// One fused forward/backward under a mask: encoders for present modalities,
/// fusion, fusion head, cross-entropy. Always the fused path, whatever the
/// mask size; stage-1 heads are untouched.
pub fn joint_grad_step(
    bundle: &ModelBundle,
    sample: &Sample,
    mask: ModalityMask,
    grads: &mut ModelBundle,
) -> Result<f64> {
    let mut zs: [Option<Vec<f64>>; 3] = [None, None, None];
    let mut caches = [None, None, None];
    for m in Modality::ALL {
        if mask.contains(m) {
            let (z, cache) = encode(bundle.encoder(m), encoder_input(sample, m)?)?;
            zs[m.index()] = Some(z);
            caches[m.index()] = Some(cache);
        }
    }
    let (h, fuse_cache) = fuse(
        &bundle.fusion,
        zs[0].as_deref(),
        zs[1].as_deref(),
        zs[2].as_deref(),
        mask,
    )?;
    let (logits, head_cache) = bundle.fusion.head.forward(&h)?;
    let (loss, _, grad_logits) = softmax_cross_entropy(&logits, sample.label.index())?;
    let grad_h = bundle
        .fusion
        .head
        .backward(&head_cache, &grad_logits, &mut grads.fusion.head);
    let grad_zs = fuse_backward(&bundle.fusion, &fuse_cache, &grad_h, &mut grads.fusion)?;
    for m in Modality::ALL {
        if let (Some(gz), Some(cache)) = (&grad_zs[m.index()], &caches[m.index()]) {
            encode_backward(bundle.encoder(m), cache, gz, grads.encoder_mut(m))?;
        }
    }
    Ok(loss)
}

fn check_finite(loss: f64) -> Result<f64> {
    if !loss.is_finite() {
        return Err(CoreError::NonFinite {
            what: "training loss",
        });
    }
    Ok(loss)
}

fn zero_params<P: Parameters>(p: &mut P) {
    for t in p.tensors_mut() {
        t.fill(0.0);
    }
}

fn scale_params<P: Parameters>(p: &mut P, s: f64) {
    for t in p.tensors_mut() {
        for x in t.iter_mut() {
            *x *= s;
        }
    }
}

#[derive(Debug, Clone)]
pub struct UniTrainResult {
    pub params: EncoderParams,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub metrics: Vec<MetricsRecord>,
    /// Dataset entries lacking the modality (skipped every epoch).
    pub skipped: usize,
}

/// Stage 1: trains one modality's encoder and head from scratch.
pub fn train_unimodal(
    samples: &[Sample],
    modality: Modality,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    vocab: &Vocab,
) -> Result<UniTrainResult> {
    model_cfg.validate()?;
    cfg.validate()?;
    if samples.is_empty() {
        return Err(CoreError::EmptyInput {
            what: "training dataset",
        });
    }
    let mut rng = Rng::new(cfg.seed);
    let mut params = init_recurrent(modality, model_cfg.encoder_dims(modality, vocab.len()), &mut rng);
    let usable: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].mask.contains(modality))
        .collect();
    let skipped = samples.len() - usable.len();
    if usable.is_empty() {
        return Err(CoreError::EmptyInput {
            what: "training dataset entries carrying the modality",
        });
    }
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut adam = AdamState::for_params(&params);
    let mut grads = crate::encoder::zeros_like(&params);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut metrics = Vec::with_capacity(cfg.epochs);

    let mut order = usable.clone();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            zero_params(&mut grads);
            for &i in chunk {
                loss_sum += check_finite(uni_step(&params, &samples[i], &mut grads)?)?;
            }
            if chunk.len() > 1 {
                scale_params(&mut grads, 1.0 / chunk.len() as f64);
            }
            adam_step(&mut params, &grads, &adam_cfg, &mut adam)?;
        }
        let mean_loss = loss_sum / order.len() as f64;
        epoch_losses.push(mean_loss);

        let mut cm = ConfusionMatrix::new();
        for &i in &usable {
            let s = &samples[i];
            let (z, _) = encode(&params, encoder_input(s, modality)?)?;
            let (logits, _) = params.head.forward(&z)?;
            let probs = softmax(&logits);
            let pred = crate::fusion::ActionDistribution::from_probs(&probs)?.argmax();
            cm.add(s.label, pred);
        }
        metrics.push(MetricsRecord {
            epoch: epoch + 1,
            split: String::from("train"),
            loss: mean_loss,
            accuracy: cm.accuracy(),
            f1: cm.per_class_f1(),
            macro_f1: cm.macro_f1(),
            n: cm.total(),
        });
    }
    Ok(UniTrainResult {
        params,
        epoch_losses,
        metrics,
        skipped,
    })
}

#[derive(Debug, Clone)]
pub struct JointTrainResult {
    pub bundle: ModelBundle,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub metrics: Vec<MetricsRecord>,
    /// Steps where the dropout mask removed every modality the sample had;
    /// such steps fall back to the sample's own mask.
    pub dropout_fallbacks: usize,
}

/// Stage 2: end-to-end training with random modality dropout. Every
/// parameter group is unfrozen; the stage-1 heads receive zero gradient
/// because the fused path never touches them.
pub fn train_joint(
    mut bundle: ModelBundle,
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<JointTrainResult> {
    bundle.check_consistency()?;
    cfg.validate()?;
    if samples.is_empty() {
        return Err(CoreError::EmptyInput {
            what: "training dataset",
        });
    }
    for s in samples {
        if s.mask.is_empty() {
            return Err(CoreError::Data {
                detail: alloc::format!(
                    "sample {}[{}] has zero available modalities",
                    s.utt_id,
                    s.word_idx
                ),
            });
        }
    }
    if !bundle.stages.stage1_complete() && !cfg.from_scratch {
        return Err(CoreError::Config {
            detail: String::from(
                "bundle lacks stage-1 training; set from_scratch to train anyway",
            ),
        });
    }
    let mut rng = Rng::new(cfg.seed);
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut adam = AdamState::for_params(&bundle);
    let mut grads = bundle.zeros_like();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut dropout_fallbacks = 0usize;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            zero_params(&mut grads);
            for &i in chunk {
                let s = &samples[i];
                let drawn = rmdt_sample(&mut rng, cfg.rmdt_prob);
                let mut eff = drawn.intersect(&s.mask);
                if eff.is_empty() {
                    dropout_fallbacks += 1;
                    eff = s.mask;
                }
                loss_sum += check_finite(joint_grad_step(&bundle, s, eff, &mut grads)?)?;
            }
            if chunk.len() > 1 {
                scale_params(&mut grads, 1.0 / chunk.len() as f64);
            }
            adam_step(&mut bundle, &grads, &adam_cfg, &mut adam)?;
        }
        let mean_loss = loss_sum / order.len() as f64;
        epoch_losses.push(mean_loss);

        let report = crate::eval::evaluate(&bundle, samples, ModalityMask::FULL, "")?;
        metrics.push(MetricsRecord {
            epoch: epoch + 1,
            split: String::from("train"),
            loss: mean_loss,
            accuracy: report.accuracy,
            f1: report.f1,
            macro_f1: report.macro_f1,
            n: report.n,
        });
    }
    bundle.stages.joint = true;
    Ok(JointTrainResult {
        bundle,
        epoch_losses,
        metrics,
        dropout_fallbacks,
    })
}
