//! Binary-level behaviour: exit codes, outputs and configuration handling.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

fn corpus_config() -> PathBuf {
    fixtures().join("corpus").join("run.toml")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_legalprompt"))
}

/// Run with the fixture corpus config and `out` as output directory.
fn run(out: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(corpus_config())
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let o = bin().output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predict_on_test_split_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["predict", "--strategy", "zero_shot", "--provider", "mock", "--split", "test"];
    for dir in [&a, &b] {
        let o = run(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let rel = Path::new("predictions").join("test").join("zero_shot.jsonl");
    let records = read_jsonl(&a.path().join(&rel));
    assert_eq!(records.len(), 5);
    assert!(records.iter().all(|r| r["strategy"] == "zero_shot"));
    assert!(records.iter().all(|r| r["label"] == "TRUE" || r["label"] == "FALSE"));
    assert_eq!(
        fs::read(a.path().join(&rel)).unwrap(),
        fs::read(b.path().join(&rel)).unwrap()
    );
}

#[test]
fn score_reports_macro_f1_and_accuracy() {
    let out = tempfile::tempdir().unwrap();
    let scored = fixtures().join("scored");
    let o = bin()
        .arg("--output-dir")
        .arg(out.path())
        .arg("score")
        .arg("--predictions")
        .arg(scored.join("ensemble.jsonl"))
        .arg("--gold")
        .arg(scored.join("gold.jsonl"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains(".8095"), "{stdout}");
    assert!(stdout.contains(".8571"), "{stdout}");
    assert!(out.path().join("scores").join("scores.jsonl").exists());
}

#[test]
fn missing_data_path_is_a_config_error() {
    let out = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("--output-dir")
        .arg(out.path())
        .args(["predict", "--strategy", "zero_shot", "--split", "validation"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn malformed_dataset_is_a_data_error() {
    let out = tempfile::tempdir().unwrap();
    let bad = out.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\", \"introduction\": \n").unwrap();
    let o = run(out.path(), &["--validation", bad.to_str().unwrap(), "validate-data"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn replay_without_cache_is_a_provider_error() {
    let out = tempfile::tempdir().unwrap();
    let o = run(
        out.path(),
        &["predict", "--strategy", "zero_shot", "--provider", "replay", "--split", "test"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn printed_config_loads_back_unchanged() {
    let out = tempfile::tempdir().unwrap();
    let first = run(out.path(), &["print-config"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let saved = out.path().join("effective.toml");
    fs::write(&saved, &first.stdout).unwrap();
    let second = bin().arg("--config").arg(&saved).arg("print-config").output().unwrap();
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn default_ensemble_uses_four_members_at_half() {
    let out = tempfile::tempdir().unwrap();
    let o = run(out.path(), &["predict-all", "--split", "validation"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(out.path(), &["ensemble-vote", "--split", "validation"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let config: Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("ensemble").join("config_validation.json")).unwrap())
            .unwrap();
    assert_eq!(
        config["members"],
        serde_json::json!(["zero_shot", "zero_shot_cot", "few_shot_cot", "few_shot_cot_rag"])
    );
    assert_eq!(config["threshold"], 0.5);
    let votes = read_jsonl(&out.path().join("predictions").join("validation").join("ensemble.jsonl"));
    assert_eq!(votes.len(), 20);
    for v in &votes {
        let fraction = v["true_fraction"].as_f64().unwrap();
        assert_eq!(v["label"] == "TRUE", fraction >= 0.5);
    }
}

#[test]
fn warm_cache_rerun_is_idempotent() {
    let out = tempfile::tempdir().unwrap();
    let args = ["predict", "--strategy", "few_shot_cot_rag", "--split", "validation"];
    assert!(run(out.path(), &args).status.success());
    let rel = Path::new("predictions").join("validation").join("few_shot_cot_rag.jsonl");
    let first = fs::read(out.path().join(&rel)).unwrap();
    let cache = out.path().join("cache");
    let cached = fs::read_dir(&cache).unwrap().count();

    let o = run(out.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(out.path().join(&rel)).unwrap(), first);
    assert_eq!(fs::read_dir(&cache).unwrap().count(), cached);

    // The cache alone now answers every request.
    let o = run(
        out.path(),
        &["predict", "--strategy", "few_shot_cot_rag", "--provider", "replay", "--split", "validation"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(out.path().join(&rel)).unwrap(), first);
}

#[test]
fn leakage_audit_finds_the_planted_pairs() {
    let out = tempfile::tempdir().unwrap();
    let o = run(out.path(), &["audit-leakage"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("leakage").join("validation.json")).unwrap()).unwrap();
    let text = report.to_string();
    assert!(text.contains("va003") && text.contains("tr005"), "{text}");
    assert!(text.contains("va011") && text.contains("tr013"), "{text}");
}
