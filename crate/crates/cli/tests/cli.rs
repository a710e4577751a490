//! End-to-end checks of the binary: exit codes, artifacts, determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splitlora"))
}

fn tiny_config_json() -> &'static str {
    r#"{
  "stream": {
    "kind": "gaussian",
    "tasks": 2,
    "classes_per_task": 2,
    "input_dim": 6,
    "separation": 3.0,
    "train_per_class": 10,
    "test_per_class": 10
  },
  "network": { "hidden_widths": [8, 8], "pretrain": false },
  "train": { "epochs": 2, "batch_size": 8 },
  "seeds": [1, 2]
}
"#
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, tiny_config_json()).unwrap();
    path
}

fn run_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_config_exits_2() {
    let out = bin().args(["run", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"seeds\": [1,\n}").unwrap();
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "stderr: {err}");
}

#[test]
fn dry_run_prints_config_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = bin().arg("run").arg(&cfg).arg("--out-dir").arg(&out_dir).arg("--dry-run").output().unwrap();
    run_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"gaussian\""));
    assert!(!out_dir.exists());
}

#[test]
fn run_writes_artifacts_and_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = bin().arg("run").arg(&cfg).arg("--out-dir").arg(out_dir).output().unwrap();
        run_ok(&out);
    }
    for file in ["results.json", "metrics.json", "aggregate.csv", "manifest.json"] {
        assert!(out_a.join(file).exists(), "{file}");
    }
    assert!(out_a.join("seed_1").join("gradmem").join("manifest.json").exists());
    let a = std::fs::read(out_a.join("results.json")).unwrap();
    let b = std::fs::read(out_b.join("results.json")).unwrap();
    assert_eq!(a, b, "results.json must be byte-identical across reruns");
}

#[test]
fn seed_override_restricts_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let out =
        bin().arg("run").arg(&cfg).arg("--out-dir").arg(&out_dir).args(["--seed", "9"]).output().unwrap();
    run_ok(&out);
    assert!(out_dir.join("seed_9").exists());
    assert!(!out_dir.join("seed_1").exists());
}

#[test]
fn env_var_sets_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("from_env");
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .args(["--seed", "3"])
        .env("SPLITLORA_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    run_ok(&out);
    assert!(out_dir.join("results.json").exists());
}

#[test]
fn sweep_alpha_rejects_duplicates_and_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = bin()
        .arg("sweep-alpha")
        .arg(&cfg)
        .args(["--alphas", "1,5,5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out_dir = dir.path().join("sweep");
    let out = bin()
        .arg("sweep-alpha")
        .arg(&cfg)
        .args(["--alphas", "1,5", "--seed", "4"])
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    run_ok(&out);
    assert!(out_dir.join("sweep_summary.json").exists());
    assert!(out_dir.join("alpha_1").join("results.json").exists());
    assert!(out_dir.join("alpha_5").join("results.json").exists());
    let csv = std::fs::read_to_string(out_dir.join("relative_curves.csv")).unwrap();
    let baseline_row =
        csv.lines().nth(1).expect("baseline row");
    // relative columns of the baseline alpha are exactly zero
    assert!(baseline_row.starts_with("1,"), "row: {baseline_row}");
    assert!(baseline_row.ends_with(",0,0"), "row: {baseline_row}");
}

#[test]
fn theory_command_passes_and_strict_tolerance_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["theory", "--trials", "120"])
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    run_ok(&out);
    assert!(dir.path().join("theory_report.json").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"));

    let out = bin()
        .args(["theory", "--trials", "50", "--tolerance-scale", "0"])
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
