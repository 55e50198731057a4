//! Subcommand implementations.
//!
//! Every command reads inputs whole, works in memory, and writes outputs
//! atomically (temp file in the target directory, then rename). Output paths
//! must not alias input paths; inputs are never modified.

use std::io::Write;
use std::path::{Path, PathBuf};

use mmf2f_core::checkpoint::Checkpoint;
use mmf2f_core::dialogue::{BcVocab, Conversation, label_words};
use mmf2f_core::encoder::Modality;
use mmf2f_core::eval::{evaluate, format_ablation_table, run_ablation};
use mmf2f_core::fusion::ModalityMask;
use mmf2f_core::manifest::{parse_manifest, write_manifest, ManifestHeader};
use mmf2f_core::model::{ModelBundle, ModelConfig};
use mmf2f_core::sample::{build_samples, FrameSpec, Sample};
use mmf2f_core::synth::{gen_synthetic, write_hidden, SyntheticConfig};
use mmf2f_core::train::{train_joint as core_train_joint, train_unimodal, MetricsRecord, TrainConfig};
use mmf2f_core::vocab::Vocab;
use mmf2f_core::Rng;

use crate::predict::{run_predict, PredictOpts};
use crate::settings::{
    require_path, resolve_f64, resolve_path, resolve_u64, resolve_usize, FileConfig,
};
use crate::{
    AblateArgs, CliError, EvalArgs, GenArgs, LabelArgs, ModalityArg, PredictArgs, TrainJointArgs,
    TrainUniArgs,
};

fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: &dyn std::fmt::Display| {
        CliError::Data(format!("cannot write {}: {e}", path.display()))
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(content.as_bytes()).map_err(|e| fail(&e))?;
    tmp.flush().map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e))?;
    Ok(())
}

/// No subcommand may write over one of its own inputs.
fn ensure_not_input(out: &Path, inputs: &[&Path]) -> Result<(), CliError> {
    if !out.exists() {
        return Ok(());
    }
    let out_canon = out.canonicalize().ok();
    for input in inputs {
        let same = match (&out_canon, input.canonicalize().ok()) {
            (Some(a), Some(b)) => *a == b,
            _ => out == *input,
        };
        if same {
            return Err(CliError::Usage(format!(
                "output {} would overwrite an input file",
                out.display()
            )));
        }
    }
    Ok(())
}

/// The hidden generator record lives next to the manifest.
fn hidden_path(out: &Path) -> PathBuf {
    out.with_extension("hidden.jsonl")
}

fn load_manifest(path: &Path) -> Result<(ManifestHeader, Vec<Conversation>), CliError> {
    let text = read_input(path)?;
    parse_manifest(&text)
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = read_input(path)?;
    Checkpoint::from_json(&text)
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    let mut json = ck.to_json()?;
    json.push('\n');
    write_atomic(path, &json)
}

/// Samples in the manifest's own frame geometry.
fn manifest_samples(
    header: &ManifestHeader,
    conversations: &[Conversation],
    vocab: &Vocab,
) -> Result<Vec<Sample>, CliError> {
    let spec = FrameSpec {
        audio_width: header.audio_width,
        video_width: header.video_width,
        video_window: header.n,
    };
    build_samples(conversations, vocab, &spec).map_err(|e| {
        let mut msg = e.to_string();
        if msg.contains("no label") {
            msg.push_str(" (run `mmf2f label` first)");
        }
        CliError::Data(msg)
    })
}

fn check_widths(config: &ModelConfig, header: &ManifestHeader) -> Result<(), CliError> {
    let pairs = [
        ("audio width", config.audio_width, header.audio_width),
        ("video width", config.video_width, header.video_width),
        ("video window", config.video_window, header.n),
    ];
    for (what, model, data) in pairs {
        if model != data {
            return Err(CliError::Data(format!(
                "checkpoint {what} {model} does not match manifest {what} {data}"
            )));
        }
    }
    Ok(())
}

/// Parses a combination like "TA" or "tav". Order and case are free; each
/// letter at most once.
fn parse_mask(s: &str) -> Result<ModalityMask, CliError> {
    let mut mask = ModalityMask {
        text: false,
        audio: false,
        video: false,
    };
    for c in s.chars() {
        let m = match c.to_ascii_uppercase() {
            'T' => Modality::Text,
            'A' => Modality::Audio,
            'V' => Modality::Video,
            other => {
                return Err(CliError::Usage(format!(
                    "invalid modality letter {other:?} in {s:?} (use T, A, V)"
                )))
            }
        };
        if mask.contains(m) {
            return Err(CliError::Usage(format!("duplicate modality letter in {s:?}")));
        }
        mask.set(m, true);
    }
    if mask.is_empty() {
        return Err(CliError::Usage(format!(
            "modality combination {s:?} selects nothing"
        )));
    }
    Ok(mask)
}

fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<(), CliError> {
    let mut out = String::new();
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| CliError::Data(format!("metrics serialization failed: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    write_atomic(path, &out)
}

fn print_metrics(records: &[MetricsRecord]) {
    for r in records {
        println!(
            "epoch {:>3} [{}] loss {:.4} acc {:.4} macro-f1 {:.4} (n={})",
            r.epoch, r.split, r.loss, r.accuracy, r.macro_f1, r.n
        );
    }
}

pub fn gen(args: GenArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let out = require_path(args.out, "out", &file)?;
    let defaults = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        n_words: resolve_usize(args.n, "n", &file, defaults.n_words)?,
        words_per_conversation: args.words_per_conv.unwrap_or(defaults.words_per_conversation),
        seed: resolve_u64(args.seed, "seed", &file, defaults.seed)?,
        ..defaults
    };
    let data = gen_synthetic(&cfg)?;
    let manifest = write_manifest(&data.header, &data.conversations);
    let hidden = write_hidden(&cfg, &data.latents);
    let hidden_out = hidden_path(&out);
    write_atomic(&out, &manifest)?;
    write_atomic(&hidden_out, &hidden)?;
    let words: usize = data
        .conversations
        .iter()
        .flat_map(|c| &c.utterances)
        .map(|u| u.words.len())
        .sum();
    println!(
        "wrote {} word frames in {} conversations to {}",
        words,
        data.conversations.len(),
        out.display()
    );
    println!("hidden generator record: {}", hidden_out.display());
    Ok(())
}

pub fn label(args: LabelArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let manifest = require_path(args.manifest, "manifest", &file)?;
    let out = require_path(args.out, "out", &file)?;
    ensure_not_input(&out, &[&manifest])?;
    let (header, conversations) = load_manifest(&manifest)?;
    let bc = BcVocab::default();
    let labeled: Vec<Conversation> = conversations.iter().map(|c| label_words(c, &bc)).collect();
    write_atomic(&out, &write_manifest(&header, &labeled))?;
    println!(
        "labeled {} conversations into {}",
        labeled.len(),
        out.display()
    );
    Ok(())
}

impl ModalityArg {
    fn selected(self) -> Vec<Modality> {
        match self {
            ModalityArg::Text => vec![Modality::Text],
            ModalityArg::Audio => vec![Modality::Audio],
            ModalityArg::Video => vec![Modality::Video],
            ModalityArg::All => Modality::ALL.to_vec(),
        }
    }
}

pub fn train_uni(args: TrainUniArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let manifest_path = require_path(args.manifest, "manifest", &file)?;
    let out = require_path(args.out, "out", &file)?;
    let base = resolve_path(args.checkpoint, "checkpoint", &file)?;
    let metrics_path = resolve_path(args.metrics, "metrics", &file)?;
    let seed = resolve_u64(args.seed, "seed", &file, 0)?;
    let train_defaults = TrainConfig::default();
    let epochs = resolve_usize(args.epochs, "epochs", &file, train_defaults.epochs)?;
    let lr = resolve_f64(args.lr, "lr", &file, train_defaults.lr)?;

    let mut inputs: Vec<&Path> = vec![manifest_path.as_path()];
    if let Some(b) = &base {
        inputs.push(b.as_path());
    }
    ensure_not_input(&out, &inputs)?;

    let (header, conversations) = load_manifest(&manifest_path)?;
    let mut bundle = match &base {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            check_widths(&ck.bundle.config, &header)?;
            ck.bundle
        }
        None => {
            let model_cfg = ModelConfig {
                audio_width: header.audio_width,
                video_width: header.video_width,
                video_window: header.n,
                rank: resolve_usize(args.rank, "rank", &file, ModelConfig::default().rank)?,
                ..ModelConfig::default()
            };
            let vocab = Vocab::build(&conversations);
            ModelBundle::init(&model_cfg, &vocab, &mut Rng::new(seed))?
        }
    };
    let vocab = bundle.vocab.clone();
    let samples = manifest_samples(&header, &conversations, &vocab)?;

    let modalities = args.modality.selected();
    let mut selected_mask = ModalityMask {
        text: false,
        audio: false,
        video: false,
    };
    let mut all_metrics: Vec<MetricsRecord> = Vec::new();
    for m in &modalities {
        selected_mask.set(*m, true);
        let cfg = TrainConfig {
            lr,
            epochs,
            // Distinct stream per modality, still governed by --seed.
            seed: seed.wrapping_add(m.index() as u64),
            modalities: ModalityMask::single(*m),
            ..train_defaults
        };
        let result = train_unimodal(&samples, *m, &bundle.config, &cfg, &vocab)?;
        if result.skipped > 0 {
            println!(
                "{}: skipped {} samples lacking the modality",
                m.name(),
                result.skipped
            );
        }
        let mut metrics = result.metrics;
        for rec in &mut metrics {
            rec.split = format!("train-{}", m.name());
        }
        print_metrics(&metrics);
        all_metrics.extend(metrics);
        bundle.install_encoder(result.params)?;
    }
    if let Some(path) = &metrics_path {
        write_metrics(path, &all_metrics)?;
    }

    let stored = TrainConfig {
        lr,
        epochs,
        seed,
        modalities: selected_mask,
        ..train_defaults
    };
    let ck = Checkpoint::new(bundle, stored);
    save_checkpoint(&out, &ck)?;
    println!("checkpoint {} written to {}", ck.id()?, out.display());
    Ok(())
}

pub fn train_joint(args: TrainJointArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let manifest_path = require_path(args.manifest, "manifest", &file)?;
    let out = require_path(args.out, "out", &file)?;
    let base = resolve_path(args.checkpoint, "checkpoint", &file)?;
    let metrics_path = resolve_path(args.metrics, "metrics", &file)?;
    let seed = resolve_u64(args.seed, "seed", &file, 0)?;
    let train_defaults = TrainConfig::default();
    let epochs = resolve_usize(args.epochs, "epochs", &file, train_defaults.epochs)?;
    let lr = resolve_f64(args.lr, "lr", &file, train_defaults.lr)?;
    let p = resolve_f64(args.p, "p", &file, train_defaults.rmdt_prob)?;

    let mut inputs: Vec<&Path> = vec![manifest_path.as_path()];
    if let Some(b) = &base {
        inputs.push(b.as_path());
    }
    ensure_not_input(&out, &inputs)?;

    let (header, conversations) = load_manifest(&manifest_path)?;
    let bundle = match &base {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            check_widths(&ck.bundle.config, &header)?;
            ck.bundle
        }
        None => {
            if !args.from_scratch {
                return Err(CliError::Usage(
                    "train-joint needs --checkpoint (a stage-1 bundle) or --from-scratch".into(),
                ));
            }
            let model_cfg = ModelConfig {
                audio_width: header.audio_width,
                video_width: header.video_width,
                video_window: header.n,
                rank: resolve_usize(args.rank, "rank", &file, ModelConfig::default().rank)?,
                ..ModelConfig::default()
            };
            let vocab = Vocab::build(&conversations);
            ModelBundle::init(&model_cfg, &vocab, &mut Rng::new(seed))?
        }
    };
    let samples = manifest_samples(&header, &conversations, &bundle.vocab)?;

    let cfg = TrainConfig {
        lr,
        epochs,
        rmdt_prob: p,
        seed,
        modalities: ModalityMask::FULL,
        from_scratch: args.from_scratch,
        ..train_defaults
    };
    let result = core_train_joint(bundle, &samples, &cfg)?;
    if result.dropout_fallbacks > 0 {
        println!(
            "dropout fallbacks: {} steps kept the sample's own mask",
            result.dropout_fallbacks
        );
    }
    print_metrics(&result.metrics);
    if let Some(path) = &metrics_path {
        write_metrics(path, &result.metrics)?;
    }

    let ck = Checkpoint::new(result.bundle, cfg);
    save_checkpoint(&out, &ck)?;
    println!("checkpoint {} written to {}", ck.id()?, out.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let manifest_path = require_path(args.manifest, "manifest", &file)?;
    let checkpoint_path = require_path(args.checkpoint, "checkpoint", &file)?;
    let report_path = resolve_path(args.report, "report", &file)?;
    let mask = parse_mask(&args.modalities)?;

    if let Some(r) = &report_path {
        ensure_not_input(r, &[manifest_path.as_path(), checkpoint_path.as_path()])?;
    }
    let ck = load_checkpoint(&checkpoint_path)?;
    let (header, conversations) = load_manifest(&manifest_path)?;
    check_widths(&ck.bundle.config, &header)?;
    let samples = manifest_samples(&header, &conversations, &ck.bundle.vocab)?;

    let report = evaluate(&ck.bundle, &samples, mask, &ck.id()?)?;
    print!("{}", format_ablation_table(std::slice::from_ref(&report)));
    if report.mask_warnings > 0 {
        println!(
            "warning: {} samples lacked part of the requested combination",
            report.mask_warnings
        );
    }
    if report.skipped_empty > 0 {
        println!(
            "warning: {} samples had no requested modality at all and were skipped",
            report.skipped_empty
        );
    }
    if let Some(path) = &report_path {
        let line = serde_json::to_string(&report)
            .map_err(|e| CliError::Data(format!("report serialization failed: {e}")))?;
        write_atomic(path, &format!("{line}\n"))?;
    }
    Ok(())
}

pub fn ablate(args: AblateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let manifest_path = require_path(args.manifest, "manifest", &file)?;
    let checkpoint_path = require_path(args.checkpoint, "checkpoint", &file)?;
    let report_path = resolve_path(args.report, "report", &file)?;
    let combos: Vec<ModalityMask> = if args.combos.trim().eq_ignore_ascii_case("all") {
        ModalityMask::all_nonempty().to_vec()
    } else {
        args.combos
            .split(',')
            .map(|s| parse_mask(s.trim()))
            .collect::<Result<_, _>>()?
    };

    if let Some(r) = &report_path {
        ensure_not_input(r, &[manifest_path.as_path(), checkpoint_path.as_path()])?;
    }
    let ck = load_checkpoint(&checkpoint_path)?;
    let (header, conversations) = load_manifest(&manifest_path)?;
    check_widths(&ck.bundle.config, &header)?;
    let samples = manifest_samples(&header, &conversations, &ck.bundle.vocab)?;

    let reports = run_ablation(&ck.bundle, &samples, &combos, &ck.id()?)?;
    print!("{}", format_ablation_table(&reports));
    if let Some(path) = &report_path {
        let mut out = String::new();
        for report in &reports {
            let line = serde_json::to_string(report)
                .map_err(|e| CliError::Data(format!("report serialization failed: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
        write_atomic(path, &out)?;
    }
    Ok(())
}

pub fn predict_cmd(args: PredictArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let checkpoint_path = require_path(args.checkpoint, "checkpoint", &file)?;
    for (name, tau) in [("--tau-turn", args.tau_turn), ("--tau-bc", args.tau_bc)] {
        if let Some(t) = tau {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Usage(format!(
                    "{name} must lie in [0, 1], got {t}"
                )));
            }
        }
    }
    let ck = load_checkpoint(&checkpoint_path)?;
    let opts = PredictOpts {
        auto_reset: args.auto_reset,
        tau_turn: args.tau_turn,
        tau_bc: args.tau_bc,
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    run_predict(&ck.bundle, &opts, stdin.lock(), &mut stdout.lock())
}
