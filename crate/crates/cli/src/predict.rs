//! Streaming prediction over line-delimited records.
//!
//! One input record per word frame: {token, audio_frame?, video_frame?,
//! reset?}. The modality mask is inferred per frame from field presence.
//! A reset clears utterance context before the rest of the record is
//! processed; a record carrying only a reset emits nothing. Output is one
//! record per word frame: {p_keep, p_turn, p_bc, decision}.

use std::io::{BufRead, Write};

use mmf2f_core::dialogue::Action;
use mmf2f_core::model::ModelBundle;
use mmf2f_core::stream::{decide, StreamOutput, StreamState};
use serde::Deserialize;

use crate::CliError;

pub struct PredictOpts {
    pub auto_reset: bool,
    pub tau_turn: Option<f64>,
    pub tau_bc: Option<f64>,
}

/// A token arrives either as a vocabulary id or as a word. Unknown words map
/// to the unknown id; an out-of-range id is an error.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TokenField {
    Id(u32),
    Word(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputRecord {
    token: Option<TokenField>,
    audio_frame: Option<Vec<f64>>,
    video_frame: Option<Vec<f64>>,
    reset: Option<bool>,
}

pub fn run_predict<R: BufRead, W: Write>(
    bundle: &ModelBundle,
    opts: &PredictOpts,
    input: R,
    output: &mut W,
) -> Result<(), CliError> {
    let mut state = StreamState::new(bundle);
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CliError::Data(format!("input line {lineno}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InputRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("input line {lineno}: {e}")))?;
        if record.reset.unwrap_or(false) {
            state.reset();
        }
        let token = match record.token {
            Some(t) => t,
            None => {
                if record.reset.is_none() {
                    return Err(CliError::Data(format!(
                        "input line {lineno}: record has neither token nor reset"
                    )));
                }
                if record.audio_frame.is_some() || record.video_frame.is_some() {
                    return Err(CliError::Data(format!(
                        "input line {lineno}: frame fields require a token"
                    )));
                }
                continue;
            }
        };
        let id = match token {
            TokenField::Id(id) => {
                if (id as usize) >= bundle.vocab.len() {
                    return Err(CliError::Data(format!(
                        "input line {lineno}: token id {id} out of range (vocabulary size {})",
                        bundle.vocab.len()
                    )));
                }
                id
            }
            TokenField::Word(w) => bundle.vocab.id(&w),
        };
        let dist = state.push(
            bundle,
            id,
            record.audio_frame.as_deref(),
            record.video_frame.as_deref(),
        )?;
        let decision = decide(&dist, opts.tau_turn, opts.tau_bc);
        let out = StreamOutput::new(&dist, decision);
        let line = serde_json::to_string(&out)
            .map_err(|e| CliError::Data(format!("output serialization failed: {e}")))?;
        output
            .write_all(line.as_bytes())
            .and_then(|_| output.write_all(b"\n"))
            .and_then(|_| output.flush())
            .map_err(|e| CliError::Data(format!("cannot write output: {e}")))?;
        if opts.auto_reset && decision == Action::Turn {
            state.reset();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmf2f_core::model::{ModelBundle, ModelConfig};
    use mmf2f_core::vocab::Vocab;
    use mmf2f_core::Rng;

    fn bundle() -> ModelBundle {
        let cfg = ModelConfig {
            embed_dim: 4,
            encoder_hidden: 5,
            feature_width: 4,
            fusion_width: 6,
            rank: 2,
            head_hidden: 5,
            audio_width: 3,
            video_width: 2,
            video_window: 3,
        };
        let vocab = Vocab::from_words(["yes", "no", "maybe"]).unwrap();
        ModelBundle::init(&cfg, &vocab, &mut Rng::new(3)).unwrap()
    }

    fn run(bundle: &ModelBundle, opts: &PredictOpts, input: &str) -> Result<Vec<StreamOutput>, CliError> {
        let mut raw = Vec::new();
        run_predict(bundle, opts, input.as_bytes(), &mut raw)?;
        Ok(String::from_utf8(raw)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect())
    }

    fn plain() -> PredictOpts {
        PredictOpts {
            auto_reset: false,
            tau_turn: None,
            tau_bc: None,
        }
    }

    #[test]
    fn text_only_record_yields_a_normalized_distribution() {
        let b = bundle();
        let outs = run(&b, &plain(), "{\"token\": \"yes\"}\n").unwrap();
        assert_eq!(outs.len(), 1);
        let sum = outs[0].p_keep + outs[0].p_turn + outs[0].p_bc;
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn word_and_id_forms_agree() {
        let b = bundle();
        let by_word = run(&b, &plain(), "{\"token\": \"no\"}\n").unwrap();
        let id = b.vocab.id("no");
        let by_id = run(&b, &plain(), &format!("{{\"token\": {id}}}\n")).unwrap();
        assert_eq!(by_word, by_id);
    }

    #[test]
    fn unknown_words_fall_back_to_unk() {
        let b = bundle();
        let unknown = run(&b, &plain(), "{\"token\": \"zebra\"}\n").unwrap();
        let unk = run(&b, &plain(), "{\"token\": 0}\n").unwrap();
        assert_eq!(unknown, unk);
    }

    #[test]
    fn reset_record_clears_context_without_output() {
        let b = bundle();
        let frames = "{\"token\": \"yes\"}\n{\"token\": \"no\"}\n";
        let with_reset = format!("{frames}{{\"reset\": true}}\n{frames}");
        let outs = run(&b, &plain(), &with_reset).unwrap();
        let single = run(&b, &plain(), frames).unwrap();
        assert_eq!(outs.len(), 4);
        assert_eq!(&outs[..2], &single[..]);
        // Context restarted: the second pass repeats the first exactly.
        assert_eq!(&outs[2..], &single[..]);
    }

    #[test]
    fn reset_applies_before_the_same_records_frame() {
        let b = bundle();
        let outs = run(
            &b,
            &plain(),
            "{\"token\": \"yes\"}\n{\"token\": \"no\", \"reset\": true}\n",
        )
        .unwrap();
        let fresh = run(&b, &plain(), "{\"token\": \"no\"}\n").unwrap();
        assert_eq!(outs[1], fresh[0]);
    }

    #[test]
    fn malformed_records_are_data_errors() {
        let b = bundle();
        assert!(matches!(
            run(&b, &plain(), "{}\n").unwrap_err(),
            CliError::Data(_)
        ));
        assert!(matches!(
            run(&b, &plain(), "{\"reset\": true, \"audio_frame\": [0.0, 0.0, 0.0]}\n").unwrap_err(),
            CliError::Data(_)
        ));
        assert!(matches!(
            run(&b, &plain(), "{\"tkn\": \"yes\"}\n").unwrap_err(),
            CliError::Data(_)
        ));
        assert!(matches!(
            run(&b, &plain(), "{\"token\": 99}\n").unwrap_err(),
            CliError::Data(_)
        ));
    }

    #[test]
    fn mixed_modalities_per_frame_are_accepted() {
        let b = bundle();
        let input = "{\"token\": \"yes\", \"audio_frame\": [0.1, 0.2, 0.3]}\n\
                     {\"token\": \"no\", \"video_frame\": [0.5, 0.5]}\n\
                     {\"token\": \"maybe\", \"audio_frame\": [0.0, 0.0, 0.0], \"video_frame\": [1.0, 0.0]}\n";
        let outs = run(&b, &plain(), input).unwrap();
        assert_eq!(outs.len(), 3);
        for o in &outs {
            assert!((o.p_keep + o.p_turn + o.p_bc - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn auto_reset_clears_after_turn_decisions() {
        let b = bundle();
        // Force every decision to Turn by thresholding the other classes out:
        // tau so low that argmax Turn stays, plus tau_bc high converting BC
        // to Keep. Simpler: find a token whose argmax is Turn, else skip the
        // forcing and assert directly on equality of consecutive outputs
        // under auto-reset when a Turn occurs.
        let input = "{\"token\": \"yes\"}\n{\"token\": \"yes\"}\n";
        let opts = PredictOpts {
            auto_reset: true,
            tau_turn: None,
            tau_bc: None,
        };
        let outs = run(&b, &opts, input).unwrap();
        let first_decision = outs[0].decision.clone();
        if first_decision == "turn" {
            // Context cleared, identical frame: identical output.
            assert_eq!(outs[0], outs[1]);
        } else {
            // No turn decision, auto-reset never fires; matches plain run.
            let plain_outs = run(&b, &plain(), input).unwrap();
            assert_eq!(outs, plain_outs);
        }
    }
}
