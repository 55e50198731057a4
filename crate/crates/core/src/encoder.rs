//! Per-modality sequence encoders.
//!
//! Each modality runs the same recurrent core: h_t = tanh(W_in x_t + W_rec
//! h_{t-1}) with h_0 = 0 and no recurrent bias. Text consumes embedding rows
//! and pools with the final hidden state; audio and video consume feature
//! frames and pool with the temporal average. A linear map with bias then
//! produces the fixed-width feature z. Precomputed features bypass the core
//! entirely via the passthrough variant.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::mlp::Mlp;
use crate::opt::Parameters;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Video];

    pub fn index(self) -> usize {
        match self {
            Modality::Text => 0,
            Modality::Audio => 1,
            Modality::Video => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Modality::Text => 'T',
            Modality::Audio => 'A',
            Modality::Video => 'V',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }

    pub fn from_name(name: &str) -> Result<Modality> {
        match name {
            "text" => Ok(Modality::Text),
            "audio" => Ok(Modality::Audio),
            "video" => Ok(Modality::Video),
            other => Err(CoreError::Data {
                detail: alloc::format!("unknown modality {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentCore {
    /// Token embedding table (text only): one row per vocabulary id.
    pub embed: Option<Matrix>,
    pub w_in: Matrix,
    pub w_rec: Matrix,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl RecurrentCore {
    pub fn hidden_width(&self) -> usize {
        self.w_rec.rows()
    }

    pub fn in_width(&self) -> usize {
        self.w_in.cols()
    }

    pub fn out_width(&self) -> usize {
        self.w_out.rows()
    }

    /// h <- tanh(W_in x + W_rec h). The caller owns pooling state.
    pub fn advance(&self, h: &mut Vec<f64>, x: &[f64]) -> Result<()> {
        if x.len() != self.w_in.cols() {
            return Err(CoreError::DimMismatch {
                what: "encoder frame width",
                expected: self.w_in.cols(),
                actual: x.len(),
            });
        }
        let mut pre = self.w_in.matvec(x);
        self.w_rec.matvec_acc(h, &mut pre);
        for (hi, p) in h.iter_mut().zip(pre.iter()) {
            *hi = libm::tanh(*p);
        }
        Ok(())
    }

    pub fn embed_row(&self, token: u32) -> Result<&[f64]> {
        let table = self.embed.as_ref().ok_or(CoreError::Data {
            detail: alloc::format!("token input to an encoder without an embedding table"),
        })?;
        if token as usize >= table.rows() {
            return Err(CoreError::LabelOutOfRange {
                label: token as usize,
                n_classes: table.rows(),
            });
        }
        Ok(table.row(token as usize))
    }

    /// z = W_out pooled + b_out.
    pub fn project(&self, pooled: &[f64]) -> Result<Vec<f64>> {
        if pooled.len() != self.w_out.cols() {
            return Err(CoreError::DimMismatch {
                what: "encoder pooled width",
                expected: self.w_out.cols(),
                actual: pooled.len(),
            });
        }
        let mut z = self.w_out.matvec(pooled);
        for (zi, b) in z.iter_mut().zip(self.b_out.iter()) {
            *zi += b;
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EncoderCore {
    Recurrent(RecurrentCore),
    /// Identity over externally computed features of the given width.
    Passthrough { dim: usize },
}

/// One modality's encoder plus its own classification head (used when the
/// modality is trained or evaluated on its own).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub modality: Modality,
    pub core: EncoderCore,
    pub head: Mlp,
}

impl EncoderParams {
    /// Width of the feature z this encoder emits.
    pub fn out_width(&self) -> usize {
        match &self.core {
            EncoderCore::Recurrent(r) => r.out_width(),
            EncoderCore::Passthrough { dim } => *dim,
        }
    }
}

pub enum EncoderInput<'a> {
    Tokens(&'a [u32]),
    Frames(&'a [Vec<f64>]),
    Precomputed(&'a [f64]),
}

/// Everything backward needs: the inputs as dense rows, the hidden states in
/// order, and the pooled vector that fed the output projection.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub xs: Vec<Vec<f64>>,
    pub tokens: Vec<u32>,
    pub hs: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

/// Sum-then-divide mean over a non-empty uniform-width sequence. The exact
/// operation order matters: the streaming path accumulates the same running
/// sum, which keeps batch and incremental features bit-identical.
pub fn temporal_average_pool(seq: &[Vec<f64>]) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(CoreError::EmptyInput {
            what: "pooling input",
        });
    }
    let width = seq[0].len();
    let mut acc = vec![0.0; width];
    for frame in seq {
        if frame.len() != width {
            return Err(CoreError::DimMismatch {
                what: "pooling frame width",
                expected: width,
                actual: frame.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(frame.iter()) {
            *a += v;
        }
    }
    let n = seq.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok(acc)
}

fn pool_is_last(modality: Modality) -> bool {
    matches!(modality, Modality::Text)
}

/// Runs the encoder on one word's input slice. Text pools with the last
/// hidden state, audio and video with the temporal average.
pub fn encode(params: &EncoderParams, input: EncoderInput) -> Result<(Vec<f64>, EncoderCache)> {
    match (&params.core, input) {
        (EncoderCore::Passthrough { dim }, EncoderInput::Precomputed(values)) => {
            if values.len() != *dim {
                return Err(CoreError::DimMismatch {
                    what: "precomputed feature width",
                    expected: *dim,
                    actual: values.len(),
                });
            }
            let z = values.to_vec();
            Ok((
                z.clone(),
                EncoderCache {
                    xs: Vec::new(),
                    tokens: Vec::new(),
                    hs: Vec::new(),
                    pooled: z,
                },
            ))
        }
        (EncoderCore::Passthrough { .. }, _) => Err(CoreError::Data {
            detail: alloc::format!("passthrough encoder requires precomputed features"),
        }),
        (EncoderCore::Recurrent(core), input) => {
            let xs: Vec<Vec<f64>> = match (&input, params.modality) {
                (EncoderInput::Tokens(tokens), Modality::Text) => {
                    let mut xs = Vec::with_capacity(tokens.len());
                    for &t in tokens.iter() {
                        xs.push(core.embed_row(t)?.to_vec());
                    }
                    xs
                }
                (EncoderInput::Frames(frames), Modality::Audio | Modality::Video) => {
                    frames.to_vec()
                }
                _ => {
                    return Err(CoreError::Data {
                        detail: alloc::format!(
                            "input kind does not match {} encoder",
                            params.modality.name()
                        ),
                    })
                }
            };
            if xs.is_empty() {
                return Err(CoreError::EmptyInput {
                    what: "encoder input sequence",
                });
            }
            let tokens = match input {
                EncoderInput::Tokens(t) => t.to_vec(),
                _ => Vec::new(),
            };
            let mut hs = Vec::with_capacity(xs.len());
            let mut h = vec![0.0; core.hidden_width()];
            for x in &xs {
                core.advance(&mut h, x)?;
                hs.push(h.clone());
            }
            let pooled = if pool_is_last(params.modality) {
                hs[hs.len() - 1].clone()
            } else {
                temporal_average_pool(&hs)?
            };
            let z = core.project(&pooled)?;
            Ok((z, EncoderCache { xs, tokens, hs, pooled }))
        }
    }
}

/// Accumulates d loss / d core-params into `grads` given d loss / d z.
/// Backpropagation through time over the cached states; the passthrough
/// variant has no core parameters and is a no-op.
pub fn encode_backward(
    params: &EncoderParams,
    cache: &EncoderCache,
    grad_z: &[f64],
    grads: &mut EncoderParams,
) -> Result<()> {
    let core = match &params.core {
        EncoderCore::Passthrough { .. } => return Ok(()),
        EncoderCore::Recurrent(c) => c,
    };
    let gcore = match &mut grads.core {
        EncoderCore::Recurrent(c) => c,
        EncoderCore::Passthrough { .. } => {
            return Err(CoreError::DimMismatch {
                what: "gradient core variant",
                expected: 0,
                actual: 1,
            })
        }
    };
    if grad_z.len() != core.out_width() {
        return Err(CoreError::DimMismatch {
            what: "encoder output gradient width",
            expected: core.out_width(),
            actual: grad_z.len(),
        });
    }
    let steps = cache.hs.len();
    gcore.w_out.add_outer(grad_z, &cache.pooled);
    for (b, g) in gcore.b_out.iter_mut().zip(grad_z.iter()) {
        *b += g;
    }
    let grad_pooled = core.w_out.matvec_t(grad_z);
    let last_pool = pool_is_last(params.modality);
    let mean_scale = 1.0 / steps as f64;

    // carry = W_rec^T delta_{t+1}, the gradient flowing into h_t from the
    // next step.
    let mut carry = vec![0.0; core.hidden_width()];
    for t in (0..steps).rev() {
        let mut gh = carry.clone();
        if last_pool {
            if t == steps - 1 {
                for (g, p) in gh.iter_mut().zip(grad_pooled.iter()) {
                    *g += p;
                }
            }
        } else {
            for (g, p) in gh.iter_mut().zip(grad_pooled.iter()) {
                *g += p * mean_scale;
            }
        }
        // delta = gh * (1 - h^2), the pre-activation gradient.
        let h = &cache.hs[t];
        let delta: Vec<f64> = gh
            .iter()
            .zip(h.iter())
            .map(|(g, hi)| g * (1.0 - hi * hi))
            .collect();
        gcore.w_in.add_outer(&delta, &cache.xs[t]);
        if t > 0 {
            gcore.w_rec.add_outer(&delta, &cache.hs[t - 1]);
        }
        carry = core.w_rec.matvec_t(&delta);
        if let (Some(gtable), false) = (gcore.embed.as_mut(), cache.tokens.is_empty()) {
            let gx = core.w_in.matvec_t(&delta);
            let row = gtable.row_mut(cache.tokens[t] as usize);
            for (r, g) in row.iter_mut().zip(gx.iter()) {
                *r += g;
            }
        }
    }
    Ok(())
}

/// Running state for incremental encoding: the current hidden state plus the
/// running sum backing the temporal average. Feeding the same inputs in the
/// same order as a batch call yields bit-identical features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentStreamState {
    pub h: Vec<f64>,
    pub h_sum: Vec<f64>,
    pub steps: usize,
}

impl RecurrentStreamState {
    pub fn new(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            h_sum: vec![0.0; hidden],
            steps: 0,
        }
    }

    pub fn step_frame(&mut self, core: &RecurrentCore, x: &[f64]) -> Result<()> {
        core.advance(&mut self.h, x)?;
        for (s, hi) in self.h_sum.iter_mut().zip(self.h.iter()) {
            *s += hi;
        }
        self.steps += 1;
        Ok(())
    }

    pub fn step_token(&mut self, core: &RecurrentCore, token: u32) -> Result<()> {
        let x = core.embed_row(token)?.to_vec();
        self.step_frame(core, &x)
    }

    /// Last-state feature (text pooling).
    pub fn z_last(&self, core: &RecurrentCore) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(CoreError::EmptyInput {
                what: "stream state",
            });
        }
        core.project(&self.h)
    }

    /// Mean-state feature (audio/video pooling).
    pub fn z_mean(&self, core: &RecurrentCore) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(CoreError::EmptyInput {
                what: "stream state",
            });
        }
        let n = self.steps as f64;
        let mean: Vec<f64> = self.h_sum.iter().map(|s| s / n).collect();
        core.project(&mean)
    }
}

/// Parameter order: embedding table (when present), W_in, W_rec, W_out,
/// b_out, then the head's layers. Passthrough exposes only the head.
impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let EncoderCore::Recurrent(c) = &self.core {
            if let Some(e) = &c.embed {
                out.push(e.as_slice());
            }
            out.push(c.w_in.as_slice());
            out.push(c.w_rec.as_slice());
            out.push(c.w_out.as_slice());
            out.push(c.b_out.as_slice());
        }
        out.extend(self.head.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let EncoderCore::Recurrent(c) = &mut self.core {
            if let Some(e) = &mut c.embed {
                out.push(e.as_mut_slice());
            }
            out.push(c.w_in.as_mut_slice());
            out.push(c.w_rec.as_mut_slice());
            out.push(c.w_out.as_mut_slice());
            out.push(c.b_out.as_mut_slice());
        }
        out.extend(self.head.tensors_mut());
        out
    }
}

/// Widths for one recurrent encoder. `vocab` is set for text only.
#[derive(Debug, Clone, Copy)]
pub struct EncoderDims {
    pub vocab: Option<usize>,
    pub in_width: usize,
    pub hidden: usize,
    pub out_width: usize,
    pub head_hidden: usize,
}

pub fn init_recurrent(modality: Modality, dims: EncoderDims, rng: &mut Rng) -> EncoderParams {
    let embed = dims.vocab.map(|v| Matrix::glorot(v, dims.in_width, rng));
    let core = RecurrentCore {
        embed,
        w_in: Matrix::glorot(dims.hidden, dims.in_width, rng),
        w_rec: Matrix::glorot(dims.hidden, dims.hidden, rng),
        w_out: Matrix::glorot(dims.out_width, dims.hidden, rng),
        b_out: vec![0.0; dims.out_width],
    };
    EncoderParams {
        modality,
        core: EncoderCore::Recurrent(core),
        head: Mlp::init(&[dims.out_width, dims.head_hidden, 3], rng),
    }
}

pub fn init_passthrough(
    modality: Modality,
    dim: usize,
    head_hidden: usize,
    rng: &mut Rng,
) -> EncoderParams {
    EncoderParams {
        modality,
        core: EncoderCore::Passthrough { dim },
        head: Mlp::init(&[dim, head_hidden, 3], rng),
    }
}

/// Zero-valued clone with identical shapes, for gradient accumulation.
pub fn zeros_like(params: &EncoderParams) -> EncoderParams {
    let core = match &params.core {
        EncoderCore::Recurrent(c) => EncoderCore::Recurrent(RecurrentCore {
            embed: c.embed.as_ref().map(Matrix::zeros_like),
            w_in: Matrix::zeros_like(&c.w_in),
            w_rec: Matrix::zeros_like(&c.w_rec),
            w_out: Matrix::zeros_like(&c.w_out),
            b_out: vec![0.0; c.b_out.len()],
        }),
        EncoderCore::Passthrough { dim } => EncoderCore::Passthrough { dim: *dim },
    };
    EncoderParams {
        modality: params.modality,
        core,
        head: Mlp::zeros_like(&params.head),
    }
}
