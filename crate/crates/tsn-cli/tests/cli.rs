//! End-to-end pipeline through the `tsn` binary: generate data, train,
//! estimate sensitivity, build masks, perturb, analyze, evaluate, sweep,
//! and bundle the report — plus the error-surface contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tsn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tsn"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = tsn().args(args).output().expect("spawn tsn");
    assert!(
        out.status.success(),
        "tsn {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn run_err(args: &[&str]) -> serde_json::Value {
    let out = tsn().args(args).output().expect("spawn tsn");
    assert!(!out.status.success(), "tsn {args:?} unexpectedly succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| {
        panic!("stderr of {args:?} is not a JSON error record ({e}): {stderr}")
    })
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn path(&self, name: &str) -> String {
        p(self.dir.path(), name)
    }

    fn path_buf(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Build the artifacts once; individual assertions share them.
fn build_pipeline() -> Pipeline {
    let pl = Pipeline {
        dir: tempfile::tempdir().expect("tempdir"),
    };
    let d = &pl;

    run_ok(&[
        "gen-data",
        "model-config",
        "--out",
        &d.path("cfg.json"),
        "--layers",
        "2",
        "--d-model",
        "32",
        "--heads",
        "2",
        "--d-ff",
        "64",
        "--max-seq-len",
        "96",
    ]);
    run_ok(&[
        "gen-data",
        "tom",
        "--out",
        &d.path("tom.jsonl"),
        "--per-bucket",
        "2",
        "--seed",
        "7",
    ]);
    run_ok(&[
        "gen-data",
        "corpus",
        "--out",
        &d.path("corpus.txt"),
        "--lines",
        "60",
        "--seed",
        "7",
    ]);
    run_ok(&[
        "gen-data",
        "training-mix",
        "--tom",
        &d.path("tom.jsonl"),
        "--corpus",
        &d.path("corpus.txt"),
        "--out",
        &d.path("train.txt"),
    ]);
    run_ok(&[
        "train",
        "--model-config",
        &d.path("cfg.json"),
        "--corpus",
        &d.path("train.txt"),
        "--steps",
        "3",
        "--seed",
        "1",
        "--batch-size",
        "4",
        "--out",
        &d.path("ckpt.tsn"),
    ]);
    run_ok(&[
        "estimate-sensitivity",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--tom",
        &d.path("tom.jsonl"),
        "--limit",
        "8",
        "--out",
        &d.path("sens_task.tsn"),
    ]);
    run_ok(&[
        "estimate-sensitivity",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--corpus",
        &d.path("corpus.txt"),
        "--window",
        "16",
        "--limit",
        "6",
        "--out",
        &d.path("sens_general.tsn"),
    ]);
    run_ok(&[
        "build-mask",
        "--kind",
        "task",
        "--sens",
        &d.path("sens_task.tsn"),
        "--kappa",
        "0.004",
        "--out",
        &d.path("mask_task.tsn"),
    ]);
    run_ok(&[
        "build-mask",
        "--kind",
        "general",
        "--sens",
        &d.path("sens_general.tsn"),
        "--kappa",
        "0.004",
        "--out",
        &d.path("mask_general.tsn"),
    ]);
    run_ok(&[
        "build-mask",
        "--kind",
        "combined",
        "--task",
        &d.path("mask_task.tsn"),
        "--general",
        &d.path("mask_general.tsn"),
        "--out",
        &d.path("mask_combined.tsn"),
    ]);
    run_ok(&[
        "build-mask",
        "--kind",
        "random",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--kappa",
        "0.004",
        "--seed",
        "3",
        "--exclude",
        &d.path("mask_general.tsn"),
        "--out",
        &d.path("mask_random.tsn"),
    ]);
    run_ok(&[
        "perturb",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--mask",
        &d.path("mask_combined.tsn"),
        "--out-ckpt",
        &d.path("perturbed.tsn"),
        "--out-record",
        &d.path("record.tsn"),
    ]);
    pl
}

fn pipeline() -> &'static Pipeline {
    use std::sync::OnceLock;
    static PIPELINE: OnceLock<Pipeline> = OnceLock::new();
    PIPELINE.get_or_init(build_pipeline)
}

const INPUT_TEXT: &str = "anna puts the ball in the box . bob moves the ball to the shelf .";

#[test]
fn analyze_commands_emit_reports() {
    let d = pipeline();
    let out = d.path("analysis");
    run_ok(&[
        "analyze",
        "spectrum",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--mask",
        &d.path("mask_combined.tsn"),
        "--text",
        INPUT_TEXT,
        "--out-dir",
        &out,
    ]);
    run_ok(&[
        "analyze",
        "sinks",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--perturbed",
        &d.path("perturbed.tsn"),
        "--text",
        INPUT_TEXT,
        "--out-dir",
        &out,
    ]);
    run_ok(&[
        "analyze",
        "geometry",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--perturbed",
        &d.path("perturbed.tsn"),
        "--text",
        INPUT_TEXT,
        "--all-rows",
        "--out-dir",
        &out,
    ]);
    run_ok(&[
        "analyze",
        "delta-attn",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--perturbed",
        &d.path("perturbed.tsn"),
        "--text",
        INPUT_TEXT,
        "--layer",
        "0",
        "--head",
        "1",
        "--out-dir",
        &out,
    ]);
    run_ok(&[
        "analyze",
        "mask-rank",
        "--mask",
        &d.path("mask_combined.tsn"),
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--out-dir",
        &out,
    ]);
    run_ok(&[
        "analyze",
        "diag-dominance",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--tom",
        &d.path("tom.jsonl"),
        "--points",
        "5",
        "--samples",
        "4",
        "--seed",
        "2",
        "--out-dir",
        &out,
    ]);
    for name in [
        "spectrum.json",
        "spectrum.csv",
        "sinks.json",
        "sinks.csv",
        "geometry.json",
        "geometry.csv",
        "delta_attn.json",
        "mask_rank.json",
        "mask_rank.csv",
        "diag_dominance.json",
        "diag_dominance.csv",
    ] {
        assert!(
            d.path_buf("analysis").join(name).exists(),
            "missing {name}"
        );
    }
    // CSV headers documented in the README.
    let csv = std::fs::read_to_string(d.path_buf("analysis").join("sinks.csv")).unwrap();
    assert!(csv.starts_with("layer,head,rows,shifted,shift_ratio,mean_signed_change"));
}

#[test]
fn eval_and_sweep_and_report() {
    let d = pipeline();
    let out = d.path("evals");
    run_ok(&[
        "eval",
        "ppl",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--corpus",
        &d.path("corpus.txt"),
        "--window",
        "16",
        "--out-dir",
        &out,
    ]);
    run_ok(&[
        "eval",
        "localization",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--corpus",
        &d.path("corpus.txt"),
        "--lengths",
        "2,4",
        "--cases",
        "2",
        "--seed",
        "1",
        "--out-dir",
        &out,
    ]);
    run_ok(&[
        "eval",
        "tom",
        "--ckpt",
        &d.path("ckpt.tsn"),
        "--dataset",
        &d.path("tom.jsonl"),
        "--out-dir",
        &out,
    ]);
    let sweep_out = tsn()
        .args([
            "sweep",
            "--ckpt",
            &d.path("ckpt.tsn"),
            "--sens-task",
            &d.path("sens_task.tsn"),
            "--sens-general",
            &d.path("sens_general.tsn"),
            "--grid",
            "0:4e-3:2e-3",
            "--tom",
            &d.path("tom.jsonl"),
            "--corpus",
            &d.path("corpus.txt"),
            "--window",
            "16",
            "--out-dir",
            &out,
        ])
        .output()
        .unwrap();
    assert!(
        sweep_out.status.success(),
        "sweep failed: {}",
        String::from_utf8_lossy(&sweep_out.stderr)
    );
    run_ok(&[
        "report",
        "--dir",
        &out,
        "--out",
        &d.path("evals/report.json"),
    ]);
    let bundle: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path_buf("evals/report.json")).unwrap())
            .unwrap();
    assert!(bundle["perplexity"].is_number());
    assert!(bundle["tom"].is_object());
    assert!(bundle["sweep"]["points"].as_array().unwrap().len() == 3);
    // Reproducibility stanzas exist with fingerprints and version.
    let run_info: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path_buf("evals/sweep.run.json")).unwrap())
            .unwrap();
    assert!(run_info["config_hash"].is_string());
    assert!(!run_info["input_fingerprints"]
        .as_object()
        .unwrap()
        .is_empty());
    assert!(run_info["tool_version"].is_string());
}

#[test]
fn kappa_zero_mask_has_zero_popcount() {
    let d = pipeline();
    let out = tsn()
        .args([
            "build-mask",
            "--kind",
            "task",
            "--sens",
            &d.path("sens_task.tsn"),
            "--kappa",
            "0",
            "--out",
            &d.path("mask_zero.tsn"),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("popcount 0"), "stdout: {stdout}");
}

#[test]
fn outputs_never_overwrite() {
    let d = pipeline();
    let err = run_err(&[
        "gen-data",
        "corpus",
        "--out",
        &d.path("corpus.txt"),
        "--lines",
        "3",
    ]);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("already exists"));
}

#[test]
fn corrupted_container_is_detected() {
    let d = pipeline();
    let bytes = std::fs::read(d.path_buf("ckpt.tsn")).unwrap();
    let mut corrupt = bytes.clone();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 0x40;
    let path = d.path("corrupt.tsn");
    std::fs::write(&path, &corrupt).unwrap();
    let err = run_err(&[
        "eval",
        "tom",
        "--ckpt",
        &path,
        "--dataset",
        &d.path("tom.jsonl"),
    ]);
    assert_eq!(err["error"]["kind"], "container");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("checksum"));
}

#[test]
fn mask_mode_mismatch_refused_without_force() {
    let d = pipeline();
    // Task masks must come from final-token maps; sens_general is all-token.
    let err = run_err(&[
        "build-mask",
        "--kind",
        "task",
        "--sens",
        &d.path("sens_general.tsn"),
        "--kappa",
        "0.004",
        "--out",
        &d.path("mask_bad.tsn"),
    ]);
    assert_eq!(err["error"]["kind"], "loss-mode-mismatch");
    run_ok(&[
        "build-mask",
        "--kind",
        "task",
        "--sens",
        &d.path("sens_general.tsn"),
        "--kappa",
        "0.004",
        "--force",
        "--out",
        &d.path("mask_forced.tsn"),
    ]);
}

#[test]
fn misaligned_sweep_grid_is_rejected() {
    let d = pipeline();
    let out = tsn()
        .args([
            "sweep",
            "--ckpt",
            &d.path("ckpt.tsn"),
            "--sens-task",
            &d.path("sens_task.tsn"),
            "--sens-general",
            &d.path("sens_general.tsn"),
            "--grid",
            "0:5e-5:3e-6", // misaligned on purpose
            "--tom",
            &d.path("tom.jsonl"),
            "--corpus",
            &d.path("corpus.txt"),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("does not divide"), "stderr: {stderr}");
}

#[test]
fn unknown_run_config_keys_rejected() {
    let d = pipeline();
    let rc = d.path("run_config.json");
    std::fs::write(&rc, r#"{"no_such_key": 1}"#).unwrap();
    let err = run_err(&[
        "--run-config",
        &rc,
        "gen-data",
        "corpus",
        "--out",
        &d.path("never.txt"),
        "--lines",
        "1",
    ]);
    assert_eq!(err["error"]["kind"], "json");
}
