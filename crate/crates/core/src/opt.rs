//! Adam optimizer over any structured parameter set.
//!
//! `Parameters` exposes a model's trainable tensors as an ordered list of
//! slices; gradients reuse the same struct type, so params, grads, and moment
//! buffers always walk in the same fixed order. That ordering is part of the
//! determinism contract.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn flat_len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Bare parameter vector; handy for tests and simple optimization targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub Vec<f64>);

impl Parameters for FlatParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.0.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.0.as_mut_slice()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, flattened over the parameter walk order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn for_params<P: Parameters>(params: &P) -> Self {
        let n = params.flat_len();
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update:
/// m = b1 m + (1-b1) g, v = b2 v + (1-b2) g^2,
/// p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
pub fn adam_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    cfg: &AdamConfig,
    state: &mut AdamState,
) -> Result<()> {
    let n = params.flat_len();
    if grads.flat_len() != n {
        return Err(CoreError::DimMismatch {
            what: "adam gradient set",
            expected: n,
            actual: grads.flat_len(),
        });
    }
    if state.m.len() != n {
        return Err(CoreError::DimMismatch {
            what: "adam moment buffers",
            expected: n,
            actual: state.m.len(),
        });
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);

    let grad_tensors = grads.tensors();
    let mut cursor = 0usize;
    for (pt, gt) in params.tensors_mut().into_iter().zip(grad_tensors) {
        for (p, &g) in pt.iter_mut().zip(gt.iter()) {
            let m = &mut state.m[cursor];
            let v = &mut state.v[cursor];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= cfg.lr * mhat / (libm::sqrt(vhat) + cfg.eps);
            cursor += 1;
        }
    }
    Ok(())
}
