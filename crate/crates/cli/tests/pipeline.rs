//! End-to-end subcommand tests through the compiled binary.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn mmf2f() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mmf2f"));
    // Keep ambient path overrides out of the tests.
    for var in [
        "MMF2F_MANIFEST",
        "MMF2F_CHECKPOINT",
        "MMF2F_REPORT",
        "MMF2F_OUT",
        "MMF2F_METRICS",
        "MMF2F_CONFIG",
    ] {
        cmd.env_remove(var);
    }
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn mmf2f");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("spawn mmf2f");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn gen_manifest(dir: &Path, name: &str, seed: u64, n: usize) -> PathBuf {
    let path = dir.join(name);
    run_ok(mmf2f().args([
        "gen",
        "--out",
        path.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--n",
        &n.to_string(),
    ]));
    path
}

fn train_stage1(dir: &Path, manifest: &Path, seed: u64) -> PathBuf {
    let ck = dir.join("stage1.ck.json");
    run_ok(mmf2f().args([
        "train-uni",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        ck.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--epochs",
        "2",
        "--rank",
        "2",
    ]));
    ck
}

fn train_stage2(dir: &Path, manifest: &Path, stage1: &Path, seed: u64) -> PathBuf {
    let ck = dir.join("joint.ck.json");
    run_ok(mmf2f().args([
        "train-joint",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        stage1.to_str().unwrap(),
        "--out",
        ck.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--epochs",
        "2",
    ]));
    ck
}

#[test]
fn gen_is_byte_identical_for_the_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_manifest(dir.path(), "a.jsonl", 7, 150);
    let b = gen_manifest(dir.path(), "b.jsonl", 7, 150);
    let c = gen_manifest(dir.path(), "c.jsonl", 8, 150);
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap());
    assert_ne!(bytes_a, std::fs::read(&c).unwrap());
    // Hidden generator record lands next to the manifest, same determinism.
    let ha = std::fs::read(dir.path().join("a.hidden.jsonl")).unwrap();
    let hb = std::fs::read(dir.path().join("b.hidden.jsonl")).unwrap();
    assert_eq!(ha, hb);
}

#[test]
fn label_is_idempotent_and_refuses_in_place_writes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_manifest(dir.path(), "d.jsonl", 3, 150);
    let once = dir.path().join("once.jsonl");
    let twice = dir.path().join("twice.jsonl");
    run_ok(mmf2f().args([
        "label",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        once.to_str().unwrap(),
    ]));
    run_ok(mmf2f().args([
        "label",
        "--manifest",
        once.to_str().unwrap(),
        "--out",
        twice.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(&once).unwrap(),
        std::fs::read(&twice).unwrap()
    );
    let (code, stderr) = exit_code(mmf2f().args([
        "label",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        manifest.to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("overwrite"), "{stderr}");
    // The input survived untouched.
    assert_eq!(
        std::fs::read(&manifest).unwrap(),
        std::fs::read(dir.path().join("d.jsonl")).unwrap()
    );
}

#[test]
fn training_pipeline_produces_deterministic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_manifest(dir.path(), "train.jsonl", 11, 200);
    let ck1 = train_stage1(dir.path(), &manifest, 5);
    let again = dir.path().join("again");
    std::fs::create_dir(&again).unwrap();
    let ck1_again = train_stage1(&again, &manifest, 5);
    assert_eq!(
        std::fs::read(&ck1).unwrap(),
        std::fs::read(&ck1_again).unwrap()
    );
    let ck2 = train_stage2(dir.path(), &manifest, &ck1, 6);
    let ck2_again = train_stage2(&again, &manifest, &ck1_again, 6);
    assert_eq!(
        std::fs::read(&ck2).unwrap(),
        std::fs::read(&ck2_again).unwrap()
    );
}

#[test]
fn eval_and_ablate_report_all_combinations() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_manifest(dir.path(), "train.jsonl", 21, 200);
    let ck1 = train_stage1(dir.path(), &manifest, 1);
    let ck2 = train_stage2(dir.path(), &manifest, &ck1, 2);
    let report = dir.path().join("eval.jsonl");
    let out = run_ok(mmf2f().args([
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        ck2.to_str().unwrap(),
        "--modalities",
        "TAV",
        "--report",
        report.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("T+A+V"), "{stdout}");
    let report_text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(report_text.lines().count(), 1);
    let parsed: serde_json::Value = serde_json::from_str(report_text.trim()).unwrap();
    assert!(parsed["accuracy"].as_f64().unwrap() >= 0.0);
    assert!(parsed["checkpoint_id"].as_str().unwrap().starts_with("ck-"));

    let ablation = dir.path().join("ablate.jsonl");
    let out = run_ok(mmf2f().args([
        "ablate",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        ck2.to_str().unwrap(),
        "--combos",
        "all",
        "--report",
        ablation.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let ablation_text = std::fs::read_to_string(&ablation).unwrap();
    assert_eq!(ablation_text.lines().count(), 7, "{stdout}");
    // The tri-modal ablation row must agree with the direct eval.
    let tri_line = ablation_text
        .lines()
        .find(|l| l.contains("\"text\":true,\"audio\":true,\"video\":true"))
        .expect("tri row");
    assert_eq!(tri_line, report_text.trim());
}

#[test]
fn eval_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_manifest(dir.path(), "train.jsonl", 31, 150);
    let ck1 = train_stage1(dir.path(), &manifest, 9);
    let r1 = dir.path().join("r1.jsonl");
    let r2 = dir.path().join("r2.jsonl");
    for r in [&r1, &r2] {
        run_ok(mmf2f().args([
            "eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--checkpoint",
            ck1.to_str().unwrap(),
            "--modalities",
            "T",
            "--report",
            r.to_str().unwrap(),
        ]));
    }
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
}

#[test]
fn predict_streams_records_with_normalized_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_manifest(dir.path(), "train.jsonl", 41, 150);
    let ck1 = train_stage1(dir.path(), &manifest, 4);
    let mut child = mmf2f()
        .args(["predict", "--checkpoint", ck1.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"{\"token\": \"yeah\"}\n{\"token\": \"so\"}\n{\"reset\": true}\n{\"token\": \"yeah\"}\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let records: Vec<serde_json::Value> = stdout
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 3);
    for r in &records {
        let sum = r["p_keep"].as_f64().unwrap()
            + r["p_turn"].as_f64().unwrap()
            + r["p_bc"].as_f64().unwrap();
        assert!((sum - 1.0).abs() < 1e-9, "{r}");
        assert!(["keep", "turn", "backchannel"]
            .contains(&r["decision"].as_str().unwrap()));
    }
    // Reset restored fresh context: frame 3 repeats frame 1 exactly.
    assert_eq!(records[0], records[2]);
}

#[test]
fn usage_data_and_config_errors_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown flag: clap usage error.
    let (code, _) = exit_code(mmf2f().args(["gen", "--nope"]));
    assert_eq!(code, 2);
    // Missing required path option.
    let (code, stderr) = exit_code(mmf2f().args(["gen"]));
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("usage"), "{stderr}");
    // Missing input file: data error.
    let (code, stderr) = exit_code(mmf2f().args([
        "label",
        "--manifest",
        dir.path().join("absent.jsonl").to_str().unwrap(),
        "--out",
        dir.path().join("out.jsonl").to_str().unwrap(),
    ]));
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.contains("data"), "{stderr}");
    // Bad modality letters.
    let manifest = gen_manifest(dir.path(), "m.jsonl", 1, 150);
    let ck = train_stage1(dir.path(), &manifest, 1);
    let (code, stderr) = exit_code(mmf2f().args([
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--modalities",
        "TX",
    ]));
    assert_eq!(code, 2, "{stderr}");
    // Joint training without a stage-1 checkpoint or the scratch flag.
    let (code, stderr) = exit_code(mmf2f().args([
        "train-joint",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("j.ck.json").to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("from-scratch"), "{stderr}");
}

#[test]
fn unlabeled_manifests_get_a_labeling_hint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_manifest(dir.path(), "m.jsonl", 2, 150);
    // Strip the labels to simulate a raw ingested manifest.
    let text = std::fs::read_to_string(&manifest).unwrap();
    let stripped: Vec<String> = text
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            if let Some(words) = v.get_mut("words").and_then(|w| w.as_array_mut()) {
                for w in words {
                    w.as_object_mut().unwrap().remove("label");
                }
            }
            serde_json::to_string(&v).unwrap()
        })
        .collect();
    let raw = dir.path().join("raw.jsonl");
    std::fs::write(&raw, stripped.join("\n") + "\n").unwrap();
    let (code, stderr) = exit_code(mmf2f().args([
        "train-uni",
        "--manifest",
        raw.to_str().unwrap(),
        "--out",
        dir.path().join("ck.json").to_str().unwrap(),
        "--epochs",
        "1",
    ]));
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.contains("mmf2f label"), "{stderr}");
}

#[test]
fn env_and_config_file_feed_paths_and_scalars() {
    let dir = tempfile::tempdir().unwrap();
    // Path via environment variable.
    let out_env = dir.path().join("env.jsonl");
    run_ok(
        mmf2f()
            .args(["gen", "--seed", "7", "--n", "150"])
            .env("MMF2F_OUT", out_env.to_str().unwrap()),
    );
    let direct = gen_manifest(dir.path(), "direct.jsonl", 7, 150);
    assert_eq!(
        std::fs::read(&out_env).unwrap(),
        std::fs::read(&direct).unwrap()
    );
    // Scalars via config file; flag wins over file.
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "seed = 7\nn = 150\n").unwrap();
    let out_file = dir.path().join("file.jsonl");
    run_ok(mmf2f().args([
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_file.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(&out_file).unwrap(),
        std::fs::read(&direct).unwrap()
    );
    let out_flag = dir.path().join("flag.jsonl");
    run_ok(mmf2f().args([
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out_flag.to_str().unwrap(),
    ]));
    assert_ne!(
        std::fs::read(&out_flag).unwrap(),
        std::fs::read(&direct).unwrap()
    );
    // Unknown config key.
    std::fs::write(&cfg, "sd = 7\n").unwrap();
    let (code, stderr) = exit_code(mmf2f().args([
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x.jsonl").to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "{stderr}");
}

#[test]
fn train_uni_single_modality_leaves_stage1_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_manifest(dir.path(), "m.jsonl", 13, 150);
    let ck = dir.path().join("text-only.ck.json");
    run_ok(mmf2f().args([
        "train-uni",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        ck.to_str().unwrap(),
        "--modality",
        "text",
        "--epochs",
        "1",
        "--rank",
        "2",
    ]));
    // Joint training must refuse the incomplete bundle.
    let (code, stderr) = exit_code(mmf2f().args([
        "train-joint",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        dir.path().join("j.ck.json").to_str().unwrap(),
        "--epochs",
        "1",
    ]));
    assert_eq!(code, 2, "{stderr}");
    // Chaining the remaining modalities completes stage 1.
    let ck_full = dir.path().join("full.ck.json");
    run_ok(mmf2f().args([
        "train-uni",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--out",
        ck_full.to_str().unwrap(),
        "--modality",
        "audio",
        "--epochs",
        "1",
    ]));
    let ck_full2 = dir.path().join("full2.ck.json");
    run_ok(mmf2f().args([
        "train-uni",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        ck_full.to_str().unwrap(),
        "--out",
        ck_full2.to_str().unwrap(),
        "--modality",
        "video",
        "--epochs",
        "1",
    ]));
    run_ok(mmf2f().args([
        "train-joint",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        ck_full2.to_str().unwrap(),
        "--out",
        dir.path().join("j2.ck.json").to_str().unwrap(),
        "--epochs",
        "1",
    ]));
}

#[test]
fn metrics_logs_carry_one_record_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_manifest(dir.path(), "m.jsonl", 17, 150);
    let ck = dir.path().join("ck.json");
    let metrics = dir.path().join("metrics.jsonl");
    run_ok(mmf2f().args([
        "train-uni",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        ck.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
        "--epochs",
        "3",
        "--rank",
        "2",
    ]));
    let text = std::fs::read_to_string(&metrics).unwrap();
    // Three modalities, three epochs each.
    assert_eq!(text.lines().count(), 9);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["epoch"].as_u64().unwrap() >= 1);
        assert!(v["split"].as_str().unwrap().starts_with("train-"));
        assert!(v["loss"].as_f64().unwrap().is_finite());
        assert_eq!(v["f1"].as_array().unwrap().len(), 3);
    }
}
