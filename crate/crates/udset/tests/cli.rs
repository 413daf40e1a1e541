use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn udset(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_udset")).args(args).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn validate_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&udset(&["validate"], tmp.path())), 0);

    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"d":2,"Q":1.5,"s":{"kind":"table","values":[2,2,2]},"M":{"kind":"logfloor","min":3},"sTilde":"same-as-s","K":3}"#,
    )
    .unwrap();
    let o = udset(&["validate", "--schedule", bad.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL 3 ≤ M_k ≤ s_k"));

    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&udset(&["validate", "--schedule", missing.to_str().unwrap()], tmp.path())), 2);
}

#[test]
fn build_flags_partial_and_rejects_level_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = udset(&["build", "--preset", "toy", "--budget", "10", "--cover-points", "50"], tmp.path());
    assert_eq!(code(&o), 0);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["report"]["partial"], true);
    assert_eq!(summary["report"]["materialized_to"], 1);
    assert_eq!(code(&udset(&["build", "--preset", "toy", "--levels", "0"], tmp.path())), 2);
}

#[test]
fn every_output_carries_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&udset(&["lemma", "basic", "--trials", "3"], tmp.path())), 0);
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("config.json")).unwrap()).unwrap();
    let hash = cfg["config_sha256"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for e in fs::read_dir(tmp.path()).unwrap() {
        let text = fs::read_to_string(e.unwrap().path()).unwrap();
        assert!(text.contains(&hash));
    }
}

#[test]
fn output_directory_does_not_change_the_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    udset(&["validate"], &a);
    udset(&["validate"], &b);
    assert_eq!(fs::read(a.join("validation.json")).unwrap(), fs::read(b.join("validation.json")).unwrap());
}

#[test]
fn lemma_usage_and_precondition_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&udset(&["lemma", "nope"], tmp.path())), 2);
    // δ = Q^-2 is far above δ0 on the lemma preset.
    let o = udset(&["lemma", "crucial", "--delta-exp", "-2"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("δ0"));
    assert_eq!(code(&udset(&["lemma", "crucial", "--delta-exp", "-40.5"], tmp.path())), 0);
}

#[test]
fn calibration_and_claim() {
    let tmp = tempfile::tempdir().unwrap();
    let o = udset(&["boxcount", "--target", "segment"], tmp.path());
    assert_eq!(code(&o), 0);
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("boxcount_summary.json")).unwrap()).unwrap();
    let slope = r["report"]["slope"]["slope"].as_f64().unwrap();
    assert!((slope - 1.0).abs() < 0.05);
    assert_eq!(code(&udset(&["boxcount", "--target", "segment", "--scales", ""], tmp.path())), 2);
    // The claim's trend does not hold at this horizon; the command says so.
    assert_eq!(code(&udset(&["claim", "--preset", "toy"], tmp.path())), 1);
}

#[test]
fn sample_and_porosity_run() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&udset(&["sample", "--samples", "20", "--format", "json"], tmp.path())), 0);
    let lines = fs::read_to_string(tmp.path().join("samples.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 21);
    assert_eq!(code(&udset(&["porosity", "--samples", "2000", "--trials", "50"], tmp.path())), 0);
    assert!(tmp.path().join("porosity.json").exists());
}
