use std::path::Path;
use std::process::{Command, Output};

use mda_harness::commands::{
    run_ablation, run_evaluate, run_train_fusion, run_train_unimodal, run_weight_report,
};
use mda_harness::prepare::prepare;
use mda_harness::train::train_unimodal;
use mda_harness::{ExperimentConfig, HarnessError};

fn mda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mda"))
        .args(args)
        .output()
        .unwrap()
}

fn error_kind(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value =
        serde_json::from_str(line.trim()).unwrap_or_else(|_| panic!("not JSON: {line}"));
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn small_config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("synthetic_samples", "300"),
        ("epochs", "2"),
        ("fusion_epochs", "2"),
        ("seeds", "1"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.set("output_dir", root.join("out").to_str().unwrap())
        .unwrap();
    cfg
}

fn train_all(cfg: &ExperimentConfig) {
    for m in ["image", "text", "audio"] {
        run_train_unimodal(cfg, m).unwrap();
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = mda(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn help_exits_cleanly() {
    assert!(mda(&["--help"]).status.success());
}

#[test]
fn missing_config_file_reports_io() {
    let out = mda(&["train-fusion", "--config", "/nonexistent/cfg.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "io");
}

#[test]
fn fusion_without_encoders_is_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let err = run_train_fusion(&cfg).unwrap_err();
    assert!(matches!(err, HarnessError::MissingCheckpoint(_)), "{err}");

    let path = dir.path().join("cfg.txt");
    std::fs::write(&path, cfg.to_text()).unwrap();
    let out = mda(&["train-fusion", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "missing-checkpoint");
}

#[test]
fn evaluate_rejects_rate_mismatch_unless_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.set("eta", "0.5").unwrap();
    train_all(&cfg);
    let (ck, trained) = run_train_fusion(&cfg).unwrap();

    let err = run_evaluate(&ck, 1.0, 0.0, false).unwrap_err();
    assert!(matches!(err, HarnessError::RateMismatch(_)), "{err}");
    let out = mda(&[
        "evaluate",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--eta",
        "1",
        "--noise",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "rate-mismatch");

    run_evaluate(&ck, 1.0, 0.0, true).unwrap();
    let (path, first) = run_evaluate(&ck, 0.5, 0.0, false).unwrap();
    assert_eq!(first.accuracy, trained.accuracy);
    let bytes = std::fs::read(&path).unwrap();
    let (_, second) = run_evaluate(&ck, 0.5, 0.0, false).unwrap();
    assert_eq!(first, second);
    assert_eq!(bytes, std::fs::read(&path).unwrap());
}

#[test]
fn weight_rows_sum_to_one_at_low_eta() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.set("eta", "0.2").unwrap();
    train_all(&cfg);
    let (ck, m) = run_train_fusion(&cfg).unwrap();
    for row in m.class_weights.unwrap() {
        let sum: f64 = row.iter().map(|(mean, _)| mean).sum();
        assert!((sum - 1.0).abs() < 1e-9, "{sum}");
    }
    let (_, rows) = run_weight_report(&ck, "all").unwrap();
    // baseline, three masks and the noise scenario, per class and modality
    assert_eq!(rows.len(), 5 * 4 * 3);
    for group in rows.chunks(3) {
        if group[0].count > 0 {
            let sum: f64 = group.iter().map(|r| r.mean).sum();
            assert!((sum - 1.0).abs() < 1e-9, "{sum}");
        }
    }
}

#[test]
fn baseline_checkpoint_has_no_weight_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.set("fusion", "maximum").unwrap();
    train_all(&cfg);
    let (ck, m) = run_train_fusion(&cfg).unwrap();
    assert!(m.class_weights.is_none());
    assert!(run_weight_report(&ck, "baseline").is_err());
}

#[test]
fn ablation_grid_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.set("fusion_grid", "mda,concatenate").unwrap();
    cfg.set("eta_grid", "1.0,0.2").unwrap();
    cfg.set("noise_grid", "0").unwrap();
    let (path, rows) = run_ablation(&cfg).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.outcome.is_ok()));
    let csv = std::fs::read_to_string(path).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("fusion,eta,noise,seed,status,accuracy,macro_f1,config_hash,error\n"));
    let hashes: std::collections::HashSet<_> = rows.iter().map(|r| &r.config_hash).collect();
    assert_eq!(hashes.len(), 4);
}

#[test]
fn noiseless_unimodal_reaches_near_perfect_accuracy() {
    let mut cfg = ExperimentConfig::default();
    cfg.set("synthetic_profile", "noiseless").unwrap();
    cfg.set("synthetic_samples", "2000").unwrap();
    cfg.set("epochs", "20").unwrap();
    let prep = prepare(&cfg).unwrap();
    for m in 0..prep.n_modalities() {
        let t = train_unimodal(&prep, m, 0).unwrap();
        assert!(t.test_accuracy >= 0.99, "modality {m}: {}", t.test_accuracy);
    }
}

#[test]
fn gen_audio_writes_named_clips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("audio");
    let o = mda(&["gen-audio", "--out", out.to_str().unwrap(), "--takes", "1"]);
    assert!(o.status.success());
    let n = std::fs::read_dir(&out).unwrap().count();
    assert_eq!(n, 10 * 3);
    assert!(out.join("7_basil_0.wav").is_file());
}
