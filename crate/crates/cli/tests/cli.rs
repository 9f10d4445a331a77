//! CLI behavior: exit codes and output shapes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn prompteer() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prompteer"))
}

#[test]
fn evaluate_clean_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = prompteer()
        .args([
            "evaluate",
            "--manifest",
            fixture("eval_cs.jsonl").to_str().unwrap(),
            "--config",
            fixture("run_cs.toml").to_str().unwrap(),
            "--output-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Total MER"));
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn evaluate_with_record_failures_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("partial.jsonl");
    std::fs::write(
        &manifest,
        concat!(
            r#"{"id":"ok","audio":"cs-001.wav","reference":"也 不 需 要 做 research","task":"cs_asr","languages":["zh","en"]}"#,
            "\n",
            r#"{"id":"bad","audio":"nope.wav","reference":"x","task":"cs_asr","languages":["zh","en"]}"#,
            "\n",
        ),
    )
    .unwrap();
    let out = prompteer()
        .args([
            "evaluate",
            "--manifest",
            manifest.to_str().unwrap(),
            "--config",
            fixture("run_cs.toml").to_str().unwrap(),
            "--output-dir",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad"), "stderr: {stderr}");
}

#[test]
fn invalid_manifest_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("dup.jsonl");
    let line = r#"{"id":"a","audio":"a.wav","reference":"x","task":"cs_asr","languages":["zh","en"]}"#;
    std::fs::write(&manifest, format!("{line}\n{line}\n")).unwrap();
    let out = prompteer()
        .args([
            "evaluate",
            "--manifest",
            manifest.to_str().unwrap(),
            "--config",
            fixture("run_cs.toml").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn policy_task_mismatch_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = prompteer()
        .args([
            "evaluate",
            "--manifest",
            fixture("eval_st.jsonl").to_str().unwrap(),
            "--config",
            fixture("run_cs.toml").to_str().unwrap(),
            "--output-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "this is not a run config").unwrap();
    let out = prompteer()
        .args([
            "evaluate",
            "--manifest",
            fixture("eval_cs.jsonl").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn build_prompt_prints_display_form_and_ids() {
    let out = prompteer()
        .args([
            "build-prompt",
            "--vocab",
            fixture("vocab.manifest").to_str().unwrap(),
            "--policy",
            "concat",
            "--langs",
            "zh,en",
            "--threshold",
            "0.9",
            "--lid",
            "zh=0.95,en=0.05",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    // confident LID under threshold 0.9 keeps the single detected language
    assert!(stdout.contains("<|sot|><|zh|><|asr|>"), "{stdout}");
    assert!(stdout.contains("tokens: ["));
}

#[test]
fn sweep_prints_ranked_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = prompteer()
        .args([
            "sweep",
            "--manifest",
            fixture("eval_cs.jsonl").to_str().unwrap(),
            "--config",
            fixture("run_cs.toml").to_str().unwrap(),
            "--param",
            "lid_threshold",
            "--values",
            "0.9,1.0",
            "--output-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("top3"), "{stdout}");
    assert!(dir.path().join("sweep.json").exists());
}

#[test]
fn plan_frames_prints_indices() {
    let out = prompteer()
        .args(["plan-frames", "--video-frames", "100", "--count", "3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0 50 99");
}

#[test]
fn evaluate_over_external_wire_backend() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("wire.jsonl");
    std::fs::write(
        &manifest,
        concat!(
            r#"{"id":"w1","audio":"a.wav","reference":"hello","task":"asr","languages":["en"]}"#,
            "\n",
            r#"{"id":"w2","audio":"b.wav","reference":"world","task":"asr","languages":["en"]}"#,
            "\n",
        ),
    )
    .unwrap();
    // the echo engine stands in for a real model engine; its vocab size must
    // match the manifest's token space
    let config = dir.path().join("wire.toml");
    std::fs::write(
        &config,
        format!(
            r#"output_dir = "out"

[vocab]
manifest = "{vocab}"

[backend]
kind = "external_cmd"
command = ["{engine}", "--vocab-size", "714", "--languages", "en,zh"]

[policy]
kind = "default"
task = "asr"

[decode]
max_new_tokens = 4
"#,
            vocab = fixture("vocab.manifest").display(),
            engine = env!("CARGO_BIN_EXE_prompteer-echo-engine"),
        ),
    )
    .unwrap();
    let out = prompteer()
        .args([
            "evaluate",
            "--manifest",
            manifest.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn unknown_sweep_param_exits_two() {
    let out = prompteer()
        .args([
            "sweep",
            "--manifest",
            fixture("eval_cs.jsonl").to_str().unwrap(),
            "--config",
            fixture("run_cs.toml").to_str().unwrap(),
            "--param",
            "nope",
            "--values",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
