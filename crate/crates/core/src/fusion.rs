//! Low-rank multi-modal fusion.
//!
//! Each modality m carries `rank` factor matrices of shape d_h x d_m. Fusing
//! first forms per-modality terms as the summed factor projections,
//! term_m = sum_i W_m^(i) z_m, then multiplies the terms element-wise in the
//! fixed order text * audio * video. A modality absent from the mask
//! contributes the all-ones vector, which leaves the product untouched, so
//! any subset of modalities routes through the same parameters. The head then
//! maps the fused vector to three action logits.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dialogue::Action;
use crate::encoder::Modality;
use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::loss::softmax;
use crate::mlp::{Mlp, MlpCache};
use crate::opt::Parameters;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub text: bool,
    pub audio: bool,
    pub video: bool,
}

impl ModalityMask {
    pub const FULL: ModalityMask = ModalityMask {
        text: true,
        audio: true,
        video: true,
    };

    pub fn single(m: Modality) -> ModalityMask {
        let mut mask = ModalityMask {
            text: false,
            audio: false,
            video: false,
        };
        mask.set(m, true);
        mask
    }

    pub fn contains(&self, m: Modality) -> bool {
        match m {
            Modality::Text => self.text,
            Modality::Audio => self.audio,
            Modality::Video => self.video,
        }
    }

    pub fn set(&mut self, m: Modality, on: bool) {
        match m {
            Modality::Text => self.text = on,
            Modality::Audio => self.audio = on,
            Modality::Video => self.video = on,
        }
    }

    pub fn count(&self) -> usize {
        self.text as usize + self.audio as usize + self.video as usize
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// a AND b, per modality.
    pub fn intersect(&self, other: &ModalityMask) -> ModalityMask {
        ModalityMask {
            text: self.text && other.text,
            audio: self.audio && other.audio,
            video: self.video && other.video,
        }
    }

    /// The seven non-empty masks, canonical order: T, A, V, T+A, T+V, A+V,
    /// T+A+V.
    pub fn all_nonempty() -> [ModalityMask; 7] {
        let m = |t, a, v| ModalityMask {
            text: t,
            audio: a,
            video: v,
        };
        [
            m(true, false, false),
            m(false, true, false),
            m(false, false, true),
            m(true, true, false),
            m(true, false, true),
            m(false, true, true),
            m(true, true, true),
        ]
    }

    /// Parses "T+A+V" style strings (letters may also be run together).
    pub fn from_letters(s: &str) -> Result<ModalityMask> {
        let mut mask = ModalityMask {
            text: false,
            audio: false,
            video: false,
        };
        for ch in s.chars() {
            match ch.to_ascii_uppercase() {
                'T' => mask.text = true,
                'A' => mask.audio = true,
                'V' => mask.video = true,
                '+' | ' ' => {}
                other => {
                    return Err(CoreError::Config {
                        detail: alloc::format!("unknown modality letter {other:?}"),
                    })
                }
            }
        }
        if mask.is_empty() {
            return Err(CoreError::NoModalities);
        }
        Ok(mask)
    }

    pub fn letters(&self) -> String {
        let mut s = String::new();
        for m in Modality::ALL {
            if self.contains(m) {
                if !s.is_empty() {
                    s.push('+');
                }
                s.push(m.letter());
            }
        }
        s
    }
}

impl core::fmt::Display for ModalityMask {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.letters())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub rank: usize,
    pub d_h: usize,
    /// `rank` matrices per modality, each d_h x d_m.
    pub text_factors: Vec<Matrix>,
    pub audio_factors: Vec<Matrix>,
    pub video_factors: Vec<Matrix>,
    pub head: Mlp,
}

impl FusionParams {
    pub fn init(
        rank: usize,
        d_h: usize,
        d_in: [usize; 3],
        head_hidden: usize,
        rng: &mut Rng,
    ) -> FusionParams {
        let factors = |d_m: usize, rng: &mut Rng| -> Vec<Matrix> {
            (0..rank).map(|_| Matrix::glorot(d_h, d_m, rng)).collect()
        };
        FusionParams {
            rank,
            d_h,
            text_factors: factors(d_in[0], rng),
            audio_factors: factors(d_in[1], rng),
            video_factors: factors(d_in[2], rng),
            head: Mlp::init(&[d_h, head_hidden, 3], rng),
        }
    }

    pub fn factors(&self, m: Modality) -> &[Matrix] {
        match m {
            Modality::Text => &self.text_factors,
            Modality::Audio => &self.audio_factors,
            Modality::Video => &self.video_factors,
        }
    }

    pub fn in_width(&self, m: Modality) -> usize {
        self.factors(m)[0].cols()
    }

    pub fn zeros_like(&self) -> FusionParams {
        let z = |fs: &[Matrix]| fs.iter().map(Matrix::zeros_like).collect();
        FusionParams {
            rank: self.rank,
            d_h: self.d_h,
            text_factors: z(&self.text_factors),
            audio_factors: z(&self.audio_factors),
            video_factors: z(&self.video_factors),
            head: Mlp::zeros_like(&self.head),
        }
    }
}

/// Parameter order: text factors, audio factors, video factors (each in rank
/// order), then the head's layers.
impl Parameters for FusionParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for fs in [&self.text_factors, &self.audio_factors, &self.video_factors] {
            for f in fs {
                out.push(f.as_slice());
            }
        }
        out.extend(self.head.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for fs in [
            &mut self.text_factors,
            &mut self.audio_factors,
            &mut self.video_factors,
        ] {
            for f in fs {
                out.push(f.as_mut_slice());
            }
        }
        out.extend(self.head.tensors_mut());
        out
    }
}

#[derive(Debug, Clone)]
pub struct FuseCache {
    /// Feature vectors in mask order; None where the modality is absent.
    pub zs: [Option<Vec<f64>>; 3],
    /// Per-modality terms; the all-ones vector where absent.
    pub terms: [Vec<f64>; 3],
    pub h: Vec<f64>,
}

fn modality_term(params: &FusionParams, m: Modality, z: &[f64]) -> Result<Vec<f64>> {
    let fs = params.factors(m);
    if z.len() != fs[0].cols() {
        return Err(CoreError::DimMismatch {
            what: "fusion feature width",
            expected: fs[0].cols(),
            actual: z.len(),
        });
    }
    let mut term = vec![0.0; params.d_h];
    for f in fs {
        f.matvec_acc(z, &mut term);
    }
    Ok(term)
}

/// Fuses whatever features the mask marks present. Presence of each `z` must
/// match the mask exactly; the mask is authoritative and a mismatch is an
/// error, not a silent reinterpretation.
pub fn fuse(
    params: &FusionParams,
    z_text: Option<&[f64]>,
    z_audio: Option<&[f64]>,
    z_video: Option<&[f64]>,
    mask: ModalityMask,
) -> Result<(Vec<f64>, FuseCache)> {
    if mask.is_empty() {
        return Err(CoreError::NoModalities);
    }
    let zs = [z_text, z_audio, z_video];
    for m in Modality::ALL {
        if mask.contains(m) != zs[m.index()].is_some() {
            return Err(CoreError::MaskMismatch {
                detail: alloc::format!(
                    "mask says {} is {} but feature is {}",
                    m.name(),
                    if mask.contains(m) { "present" } else { "absent" },
                    if zs[m.index()].is_some() { "present" } else { "absent" },
                ),
            });
        }
    }
    let mut terms: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for m in Modality::ALL {
        terms[m.index()] = match zs[m.index()] {
            Some(z) => modality_term(params, m, z)?,
            None => vec![1.0; params.d_h],
        };
    }
    let mut h = terms[0].clone();
    for k in 1..3 {
        for (hi, t) in h.iter_mut().zip(terms[k].iter()) {
            *hi *= t;
        }
    }
    let cache = FuseCache {
        zs: [
            z_text.map(|z| z.to_vec()),
            z_audio.map(|z| z.to_vec()),
            z_video.map(|z| z.to_vec()),
        ],
        terms,
        h: h.clone(),
    };
    Ok((h, cache))
}

/// Accumulates factor gradients into `grads` and returns the gradient with
/// respect to each present feature (None where absent).
pub fn fuse_backward(
    params: &FusionParams,
    cache: &FuseCache,
    grad_h: &[f64],
    grads: &mut FusionParams,
) -> Result<[Option<Vec<f64>>; 3]> {
    if grad_h.len() != params.d_h {
        return Err(CoreError::DimMismatch {
            what: "fused gradient width",
            expected: params.d_h,
            actual: grad_h.len(),
        });
    }
    let mut grad_zs: [Option<Vec<f64>>; 3] = [None, None, None];
    for m in Modality::ALL {
        let k = m.index();
        let z = match &cache.zs[k] {
            Some(z) => z,
            None => continue,
        };
        // d h / d term_k is the product of the other two terms.
        let (o1, o2) = match k {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let grad_term: Vec<f64> = grad_h
            .iter()
            .zip(cache.terms[o1].iter().zip(cache.terms[o2].iter()))
            .map(|(g, (a, b))| g * a * b)
            .collect();
        let gfs = match m {
            Modality::Text => &mut grads.text_factors,
            Modality::Audio => &mut grads.audio_factors,
            Modality::Video => &mut grads.video_factors,
        };
        let mut grad_z = vec![0.0; z.len()];
        for (gf, f) in gfs.iter_mut().zip(params.factors(m).iter()) {
            gf.add_outer(&grad_term, z);
            f.matvec_t_acc(&grad_term, &mut grad_z);
        }
        grad_zs[k] = Some(grad_z);
    }
    Ok(grad_zs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub p_keep: f64,
    pub p_turn: f64,
    pub p_backchannel: f64,
}

impl ActionDistribution {
    pub fn from_probs(p: &[f64]) -> Result<ActionDistribution> {
        if p.len() != 3 {
            return Err(CoreError::DimMismatch {
                what: "action probability vector",
                expected: 3,
                actual: p.len(),
            });
        }
        Ok(ActionDistribution {
            p_keep: p[0],
            p_turn: p[1],
            p_backchannel: p[2],
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_keep, self.p_turn, self.p_backchannel]
    }

    /// Highest-probability action; ties resolve to the lowest class index.
    pub fn argmax(&self) -> Action {
        let p = self.as_array();
        let mut best = 0;
        for i in 1..3 {
            if p[i] > p[best] {
                best = i;
            }
        }
        Action::from_index(best).unwrap()
    }
}

/// Head forward plus softmax over the three actions.
pub fn predict(params: &FusionParams, h: &[f64]) -> Result<(ActionDistribution, MlpCache)> {
    let (logits, cache) = params.head.forward(h)?;
    let probs = softmax(&logits);
    Ok((ActionDistribution::from_probs(&probs)?, cache))
}

/// Dense order-4 weight tensor that the low-rank factors represent, stored
/// flat with layout index = ((j*dT + a)*dA + b)*dV + c for output j and
/// per-modality input coordinates a, b, c. Carries an explicit (zero) bias so
/// the dense path states its full affine form.
#[derive(Debug, Clone)]
pub struct FullFusionOracle {
    pub d_h: usize,
    pub dims: [usize; 3],
    pub bias: Vec<f64>,
    w: Vec<f64>,
}

impl FullFusionOracle {
    pub fn at(&self, j: usize, a: usize, b: usize, c: usize) -> f64 {
        let [dt, da, dv] = self.dims;
        debug_assert!(j < self.d_h && a < dt && b < da && c < dv);
        self.w[((j * dt + a) * da + b) * dv + c]
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }
}

const ORACLE_ELEMENT_LIMIT: usize = 1_000_000;

/// Materializes the dense tensor. For each output coordinate j the fused
/// value is the product over modalities of row j of the summed factor
/// matrices applied to that modality's feature; the multilinear form it
/// computes is therefore W[j,a,b,c] = S_T[j,a] * S_A[j,b] * S_V[j,c] with
/// S_m = sum_i W_m^(i). Refuses to allocate more than 10^6 elements.
pub fn reconstruct_full_weight(params: &FusionParams) -> Result<FullFusionOracle> {
    let dims = [
        params.in_width(Modality::Text),
        params.in_width(Modality::Audio),
        params.in_width(Modality::Video),
    ];
    let elements = params.d_h * dims[0] * dims[1] * dims[2];
    if elements > ORACLE_ELEMENT_LIMIT {
        return Err(CoreError::OracleTooLarge {
            elements,
            limit: ORACLE_ELEMENT_LIMIT,
        });
    }
    let summed = |fs: &[Matrix]| -> Matrix {
        let mut s = Matrix::zeros_like(&fs[0]);
        for f in fs {
            let dst = s.as_mut_slice();
            for (d, v) in dst.iter_mut().zip(f.as_slice().iter()) {
                *d += v;
            }
        }
        s
    };
    let st = summed(&params.text_factors);
    let sa = summed(&params.audio_factors);
    let sv = summed(&params.video_factors);
    let mut w = vec![0.0; elements];
    let mut idx = 0;
    for j in 0..params.d_h {
        for a in 0..dims[0] {
            let ta = st.get(j, a);
            for b in 0..dims[1] {
                let tab = ta * sa.get(j, b);
                for c in 0..dims[2] {
                    w[idx] = tab * sv.get(j, c);
                    idx += 1;
                }
            }
        }
    }
    Ok(FullFusionOracle {
        d_h: params.d_h,
        dims,
        bias: vec![0.0; params.d_h],
        w,
    })
}

/// Brute-force fused vector: contracts the dense tensor against the rank-one
/// stack of the three features and adds the bias. All modalities must be
/// present; this is the oracle side of the factorization identity and has no
/// masking shortcut.
pub fn fuse_via_full_tensor(
    oracle: &FullFusionOracle,
    z_text: &[f64],
    z_audio: &[f64],
    z_video: &[f64],
) -> Result<Vec<f64>> {
    let [dt, da, dv] = oracle.dims;
    if z_text.len() != dt {
        return Err(CoreError::DimMismatch {
            what: "oracle text width",
            expected: dt,
            actual: z_text.len(),
        });
    }
    if z_audio.len() != da {
        return Err(CoreError::DimMismatch {
            what: "oracle audio width",
            expected: da,
            actual: z_audio.len(),
        });
    }
    if z_video.len() != dv {
        return Err(CoreError::DimMismatch {
            what: "oracle video width",
            expected: dv,
            actual: z_video.len(),
        });
    }
    let mut h = oracle.bias.clone();
    for j in 0..oracle.d_h {
        let mut acc = 0.0;
        for (a, zt) in z_text.iter().enumerate() {
            for (b, za) in z_audio.iter().enumerate() {
                for (c, zv) in z_video.iter().enumerate() {
                    acc += oracle.at(j, a, b, c) * zt * za * zv;
                }
            }
        }
        h[j] += acc;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use crate::linalg::max_abs;
    use crate::loss::softmax_cross_entropy;

    fn params_from(
        rank: usize,
        d_h: usize,
        t: Vec<Matrix>,
        a: Vec<Matrix>,
        v: Vec<Matrix>,
    ) -> FusionParams {
        FusionParams {
            rank,
            d_h,
            text_factors: t,
            audio_factors: a,
            video_factors: v,
            head: Mlp::init(&[d_h, 4, 3], &mut Rng::new(0)),
        }
    }

    #[test]
    fn single_modality_is_plain_linear_map() {
        // d_h=2, d_T=2, rank 1, W = [[1,2],[3,4]], z = [1,0] -> [1,3].
        let p = params_from(
            1,
            2,
            alloc::vec![Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])],
            alloc::vec![Matrix::from_rows(&[&[0.5], &[0.5]])],
            alloc::vec![Matrix::from_rows(&[&[0.5], &[0.5]])],
        );
        let mask = ModalityMask::single(Modality::Text);
        let (h, _) = fuse(&p, Some(&[1.0, 0.0]), None, None, mask).unwrap();
        assert_eq!(h, alloc::vec![1.0, 3.0]);
    }

    #[test]
    fn three_terms_multiply_elementwise() {
        // Text term [1,3], audio term [2,2], video term [1,1] -> [2,6].
        let p = params_from(
            1,
            2,
            alloc::vec![Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])],
            alloc::vec![Matrix::from_rows(&[&[2.0], &[2.0]])],
            alloc::vec![Matrix::from_rows(&[&[1.0], &[1.0]])],
        );
        let (h, cache) = fuse(
            &p,
            Some(&[1.0, 0.0]),
            Some(&[1.0]),
            Some(&[1.0]),
            ModalityMask::FULL,
        )
        .unwrap();
        assert_eq!(cache.terms[0], alloc::vec![1.0, 3.0]);
        assert_eq!(cache.terms[1], alloc::vec![2.0, 2.0]);
        assert_eq!(h, alloc::vec![2.0, 6.0]);
    }

    #[test]
    fn absent_modality_equals_explicit_ones_term_bitwise() {
        let mut rng = Rng::new(9);
        let p = FusionParams::init(3, 4, [3, 2, 2], 4, &mut rng);
        let zt: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let za: Vec<f64> = (0..2).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let mask = ModalityMask {
            text: true,
            audio: true,
            video: false,
        };
        let (h_masked, cache) = fuse(&p, Some(&zt), Some(&za), None, mask).unwrap();
        // Recompute by hand with an explicit ones video term.
        let mut h_manual = cache.terms[0].clone();
        for (hm, t) in h_manual.iter_mut().zip(cache.terms[1].iter()) {
            *hm *= t;
        }
        let ones = alloc::vec![1.0; 4];
        for (hm, o) in h_manual.iter_mut().zip(ones.iter()) {
            *hm *= o;
        }
        for (a, b) in h_masked.iter().zip(h_manual.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mask_feature_mismatch_is_an_error() {
        let mut rng = Rng::new(1);
        let p = FusionParams::init(1, 2, [2, 2, 2], 4, &mut rng);
        let z = [0.1, 0.2];
        let mask = ModalityMask {
            text: true,
            audio: false,
            video: false,
        };
        assert!(matches!(
            fuse(&p, Some(&z), Some(&z), None, mask),
            Err(CoreError::MaskMismatch { .. })
        ));
        assert!(matches!(
            fuse(&p, None, None, None, mask),
            Err(CoreError::MaskMismatch { .. })
        ));
        let empty = ModalityMask {
            text: false,
            audio: false,
            video: false,
        };
        assert!(matches!(
            fuse(&p, None, None, None, empty),
            Err(CoreError::NoModalities)
        ));
    }

    #[test]
    fn reconstruct_all_ones_rank_one() {
        let ones = |r, c| {
            let mut m = Matrix::zeros(r, c);
            for v in m.as_mut_slice() {
                *v = 1.0;
            }
            m
        };
        let p = params_from(
            1,
            2,
            alloc::vec![ones(2, 2)],
            alloc::vec![ones(2, 2)],
            alloc::vec![ones(2, 2)],
        );
        let oracle = reconstruct_full_weight(&p).unwrap();
        assert!(oracle.weights().iter().all(|&w| w == 1.0));
        assert_eq!(oracle.weights().len(), 16);
    }

    #[test]
    fn zero_second_factor_set_matches_rank_one() {
        let mut rng = Rng::new(14);
        let t1 = Matrix::glorot(2, 2, &mut rng);
        let a1 = Matrix::glorot(2, 2, &mut rng);
        let v1 = Matrix::glorot(2, 2, &mut rng);
        let p1 = params_from(
            1,
            2,
            alloc::vec![t1.clone()],
            alloc::vec![a1.clone()],
            alloc::vec![v1.clone()],
        );
        let p2 = params_from(
            2,
            2,
            alloc::vec![t1, Matrix::zeros(2, 2)],
            alloc::vec![a1, Matrix::zeros(2, 2)],
            alloc::vec![v1, Matrix::zeros(2, 2)],
        );
        let o1 = reconstruct_full_weight(&p1).unwrap();
        let o2 = reconstruct_full_weight(&p2).unwrap();
        for (a, b) in o1.weights().iter().zip(o2.weights().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn reconstruction_matches_basis_vector_evaluation() {
        // fuse is multilinear in (z_T, z_A, z_V), so evaluating it on unit
        // basis triples reads the dense tensor out entry by entry. This
        // checks reconstruct_full_weight against the forward path itself.
        let mut rng = Rng::new(77);
        for rank in [1usize, 2, 3] {
            let p = FusionParams::init(rank, 2, [2, 3, 2], 4, &mut rng);
            let oracle = reconstruct_full_weight(&p).unwrap();
            for a in 0..2 {
                for b in 0..3 {
                    for c in 0..2 {
                        let mut zt = alloc::vec![0.0; 2];
                        let mut za = alloc::vec![0.0; 3];
                        let mut zv = alloc::vec![0.0; 2];
                        zt[a] = 1.0;
                        za[b] = 1.0;
                        zv[c] = 1.0;
                        let (h, _) =
                            fuse(&p, Some(&zt), Some(&za), Some(&zv), ModalityMask::FULL).unwrap();
                        for j in 0..2 {
                            let err = (h[j] - oracle.at(j, a, b, c)).abs();
                            assert!(err < 1e-12, "rank {rank} entry ({j},{a},{b},{c})");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn factored_path_matches_dense_contraction() {
        let mut rng = Rng::new(41);
        for rank in [1usize, 2, 3] {
            let p = FusionParams::init(rank, 3, [3, 2, 4], 4, &mut rng);
            let oracle = reconstruct_full_weight(&p).unwrap();
            for _ in 0..10 {
                let zt: Vec<f64> = (0..3).map(|_| rng.uniform(-1.5, 1.5)).collect();
                let za: Vec<f64> = (0..2).map(|_| rng.uniform(-1.5, 1.5)).collect();
                let zv: Vec<f64> = (0..4).map(|_| rng.uniform(-1.5, 1.5)).collect();
                let (h, _) = fuse(&p, Some(&zt), Some(&za), Some(&zv), ModalityMask::FULL).unwrap();
                let h_dense = fuse_via_full_tensor(&oracle, &zt, &za, &zv).unwrap();
                let scale = max_abs(&h).max(max_abs(&h_dense)).max(1e-30);
                for (x, y) in h.iter().zip(h_dense.iter()) {
                    assert!((x - y).abs() / scale < 1e-9, "rank {rank}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn zero_text_feature_gives_bias() {
        let mut rng = Rng::new(4);
        let p = FusionParams::init(2, 2, [2, 2, 2], 4, &mut rng);
        let oracle = reconstruct_full_weight(&p).unwrap();
        let h = fuse_via_full_tensor(&oracle, &[0.0, 0.0], &[0.3, -0.4], &[1.0, 2.0]).unwrap();
        assert_eq!(h, oracle.bias);
    }

    #[test]
    fn oracle_size_guard_trips() {
        let mut rng = Rng::new(2);
        let p = FusionParams::init(1, 64, [64, 32, 32], 4, &mut rng);
        assert!(matches!(
            reconstruct_full_weight(&p),
            Err(CoreError::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn predict_uniform_for_zero_head() {
        let mut rng = Rng::new(6);
        let mut p = FusionParams::init(1, 3, [2, 2, 2], 4, &mut rng);
        p.head = Mlp::zeros(&[3, 4, 3]);
        let (dist, _) = predict(&p, &[0.2, -0.1, 0.5]).unwrap();
        for pr in dist.as_array() {
            assert!((pr - 1.0 / 3.0).abs() < 1e-15);
        }
        // Ties resolve to the lowest index: KEEP.
        assert_eq!(dist.argmax(), Action::Keep);
    }

    #[test]
    fn predict_saturates_with_large_output_bias() {
        let mut rng = Rng::new(6);
        let mut p = FusionParams::init(1, 3, [2, 2, 2], 4, &mut rng);
        p.head = Mlp::zeros(&[3, 4, 3]);
        let n = p.head.layers.len();
        p.head.layers[n - 1].bias[1] = 1000.0;
        let (dist, _) = predict(&p, &[0.0, 0.0, 0.0]).unwrap();
        assert!(dist.p_turn > 1.0 - 1e-12);
        assert_eq!(dist.argmax(), Action::Turn);
    }

    #[test]
    fn gradients_match_finite_differences_all_masks() {
        let mut rng = Rng::new(33);
        let p = FusionParams::init(2, 3, [3, 2, 2], 4, &mut rng);
        let zt: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let za: Vec<f64> = (0..2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let zv: Vec<f64> = (0..2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let label = 1usize;
        for mask in ModalityMask::all_nonempty() {
            let pick = |on: bool, z: &Vec<f64>| if on { Some(z.clone()) } else { None };
            let izt = pick(mask.text, &zt);
            let iza = pick(mask.audio, &za);
            let izv = pick(mask.video, &zv);
            let run = |p: &FusionParams| -> crate::error::Result<f64> {
                let (h, _) = fuse(p, izt.as_deref(), iza.as_deref(), izv.as_deref(), mask)?;
                let (logits, _) = p.head.forward(&h)?;
                let (loss, _, _) = softmax_cross_entropy(&logits, label)?;
                Ok(loss)
            };
            let mut grads = p.zeros_like();
            let (h, cache) = fuse(&p, izt.as_deref(), iza.as_deref(), izv.as_deref(), mask).unwrap();
            let (logits, head_cache) = p.head.forward(&h).unwrap();
            let (_, _, grad_logits) = softmax_cross_entropy(&logits, label).unwrap();
            let grad_h = p.head.backward(&head_cache, &grad_logits, &mut grads.head);
            fuse_backward(&p, &cache, &grad_h, &mut grads).unwrap();

            let report = finite_diff_check(&p, &grads, 1e-5, run).unwrap();
            assert!(
                report.max_rel_err < 1e-6,
                "mask {mask}: gradcheck failed {report:?}"
            );
        }
    }

    #[test]
    fn backward_returns_no_gradient_for_absent_modalities() {
        let mut rng = Rng::new(8);
        let p = FusionParams::init(2, 3, [2, 2, 2], 4, &mut rng);
        let z = [0.4, -0.2];
        let mask = ModalityMask {
            text: false,
            audio: true,
            video: false,
        };
        let (_, cache) = fuse(&p, None, Some(&z), None, mask).unwrap();
        let mut grads = p.zeros_like();
        let grad_zs = fuse_backward(&p, &cache, &[1.0, 0.5, -0.25], &mut grads).unwrap();
        assert!(grad_zs[0].is_none());
        assert!(grad_zs[1].is_some());
        assert!(grad_zs[2].is_none());
        // Absent modalities accumulate nothing.
        assert!(grads.text_factors.iter().all(|m| max_abs(m.as_slice()) == 0.0));
        assert!(grads.video_factors.iter().all(|m| max_abs(m.as_slice()) == 0.0));
        assert!(grads.audio_factors.iter().any(|m| max_abs(m.as_slice()) > 0.0));
    }

    #[test]
    fn mask_letters_round_trip() {
        for mask in ModalityMask::all_nonempty() {
            let s = mask.letters();
            let back = ModalityMask::from_letters(&s).unwrap();
            assert_eq!(back, mask);
        }
        assert_eq!(ModalityMask::from_letters("tav").unwrap(), ModalityMask::FULL);
        assert!(ModalityMask::from_letters("").is_err());
        assert!(ModalityMask::from_letters("X").is_err());
    }
}
