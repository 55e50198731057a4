//! Softmax and cross-entropy, numerically stabilized by max-subtraction.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| libm::exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Returns (loss, probs, grad_logits) with loss = -log probs[label] and
/// grad_logits = probs - onehot(label).
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if label >= logits.len() {
        return Err(CoreError::LabelOutOfRange {
            label,
            n_classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| libm::exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    // loss = log(sum exp(l - max)) - (l_label - max), all shifted terms bounded.
    let loss = libm::log(sum) - (logits[label] - max);
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let mut grad = probs.clone();
    grad[label] -= 1.0;
    Ok((loss, probs, grad))
}
