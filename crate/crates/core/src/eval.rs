//! Metrics, evaluation, and the modality-ablation runner.
//!
//! Accuracy is the confusion-matrix trace over the total. F1 uses the 0/0 = 0
//! convention: a class missing from both truth and prediction scores zero.
//! The headline scalar is macro-F1, the unweighted mean over the three
//! classes. Argmax ties resolve to the lowest class index (Keep < Turn < BC).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dialogue::Action;
use crate::error::{CoreError, Result};
use crate::fusion::ModalityMask;
use crate::model::{predict_sample, ModelBundle};
use crate::sample::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// rows = true label, cols = predicted label.
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, truth: Action, pred: Action) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: usize = (0..3).map(|i| self.counts[i][i]).sum();
        trace as f64 / total as f64
    }

    /// F1 for one class; 0/0 cases (empty class, or zero precision+recall)
    /// are defined as 0.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.counts[class][class];
        let pred: usize = (0..3).map(|r| self.counts[r][class]).sum();
        let truth: usize = self.counts[class].iter().sum();
        if pred == 0 || truth == 0 {
            return 0.0;
        }
        let precision = tp as f64 / pred as f64;
        let recall = tp as f64 / truth as f64;
        if precision + recall == 0.0 {
            return 0.0;
        }
        2.0 * precision * recall / (precision + recall)
    }

    pub fn per_class_f1(&self) -> [f64; 3] {
        [self.f1(0), self.f1(1), self.f1(2)]
    }

    pub fn macro_f1(&self) -> f64 {
        self.per_class_f1().iter().sum::<f64>() / 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// The requested modality combination.
    pub mask: ModalityMask,
    pub checkpoint_id: String,
    /// Samples actually scored.
    pub n: usize,
    pub accuracy: f64,
    /// Keep, Turn, Backchannel.
    pub f1: [f64; 3],
    pub macro_f1: f64,
    /// Samples whose data lacked part of the requested mask (scored on the
    /// intersection).
    pub mask_warnings: usize,
    /// Samples skipped because the intersection was empty.
    pub skipped_empty: usize,
    pub confusion: ConfusionMatrix,
}

/// Scores every sample under the requested mask. Samples missing part of the
/// mask are scored on the intersection and counted as warnings; samples with
/// an empty intersection are skipped and counted.
pub fn evaluate(
    bundle: &ModelBundle,
    samples: &[Sample],
    mask: ModalityMask,
    checkpoint_id: &str,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(CoreError::EmptyInput {
            what: "evaluation dataset",
        });
    }
    if mask.is_empty() {
        return Err(CoreError::NoModalities);
    }
    let mut cm = ConfusionMatrix::new();
    let mut mask_warnings = 0usize;
    let mut skipped_empty = 0usize;
    for s in samples {
        let eff = mask.intersect(&s.mask);
        if eff != mask {
            mask_warnings += 1;
        }
        if eff.is_empty() {
            skipped_empty += 1;
            continue;
        }
        let dist = predict_sample(bundle, s, eff)?;
        cm.add(s.label, dist.argmax());
    }
    if cm.total() == 0 {
        return Err(CoreError::EmptyInput {
            what: "evaluation dataset after mask filtering",
        });
    }
    Ok(EvalReport {
        mask,
        checkpoint_id: String::from(checkpoint_id),
        n: cm.total(),
        accuracy: cm.accuracy(),
        f1: cm.per_class_f1(),
        macro_f1: cm.macro_f1(),
        mask_warnings,
        skipped_empty,
        confusion: cm,
    })
}

/// One report per combination from a single checkpoint; no retraining.
pub fn run_ablation(
    bundle: &ModelBundle,
    samples: &[Sample],
    combos: &[ModalityMask],
    checkpoint_id: &str,
) -> Result<Vec<EvalReport>> {
    if combos.is_empty() {
        return Err(CoreError::Config {
            detail: String::from("ablation requires at least one modality combination"),
        });
    }
    combos
        .iter()
        .map(|&mask| evaluate(bundle, samples, mask, checkpoint_id))
        .collect()
}

/// Aligned plain-text table, one row per report.
pub fn format_ablation_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str("modalities      n  accuracy   f1_keep   f1_turn     f1_bc  macro_f1\n");
    for r in reports {
        out.push_str(&format!(
            "{:<10} {:>6}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}\n",
            r.mask.letters(),
            r.n,
            r.accuracy,
            r.f1[0],
            r.f1[1],
            r.f1[2],
            r.macro_f1,
        ));
    }
    out
}
