//! Precomputed feature records.
//!
//! The ingestion boundary for externally computed backbone embeddings: one
//! JSON line per (utterance, word index, modality) carrying the feature
//! vector verbatim. Loading validates width and finiteness and returns the
//! stored values bit-exactly; the vectors feed passthrough encoders.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoder::Modality;
use crate::error::{CoreError, Result};

/// One feature record as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub utt_id: String,
    pub word_idx: usize,
    pub modality: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

/// A validated feature vector for one modality of one word frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalFeature {
    pub utt_id: String,
    pub word_idx: usize,
    pub modality: Modality,
    pub z: Vec<f64>,
}

/// Validates a record against the expected feature width and returns its
/// vector bit-exactly.
pub fn load_precomputed(record: &FeatureRecord, expected_width: usize) -> Result<ModalFeature> {
    let modality = Modality::from_name(&record.modality)?;
    if record.dim != expected_width {
        return Err(CoreError::DimMismatch {
            what: "feature record dim",
            expected: expected_width,
            actual: record.dim,
        });
    }
    if record.values.len() != record.dim {
        return Err(CoreError::DimMismatch {
            what: "feature record values length",
            expected: record.dim,
            actual: record.values.len(),
        });
    }
    if !record.values.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite {
            what: "feature record values",
        });
    }
    Ok(ModalFeature {
        utt_id: record.utt_id.clone(),
        word_idx: record.word_idx,
        modality,
        z: record.values.clone(),
    })
}

/// Parses JSON Lines text into records. Blank lines are skipped; the line
/// number of the first bad line is reported.
pub fn parse_feature_lines(text: &str) -> Result<Vec<FeatureRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeatureRecord = serde_json::from_str(line).map_err(|e| CoreError::Data {
            detail: format!("feature record on line {}: {e}", i + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_feature_lines(records: &[FeatureRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|e| CoreError::Data {
            detail: format!("feature record serialization failed: {e}"),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}
