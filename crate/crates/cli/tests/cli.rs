//! End-to-end checks of the command-line surface via the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trafficast"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("trafficast-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_spec(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("spec.txt");
    std::fs::write(
        &path,
        format!(
            "start_year = 2011\nyears = 3\nbase_volume = 600\nnoise_std = 0.03\nmissing_rate = 0.02\nseed = 8\n{extra}"
        ),
    )
    .unwrap();
    path
}

#[test]
fn synth_ingest_round_trip() {
    let dir = workdir("synth");
    let spec = write_spec(&dir, "");
    let csv = dir.join("series.csv");
    let out = bin().args(["synth"]).arg(&spec).arg(&csv).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(csv.exists());
    assert!(dir.join("series.complete.csv").exists());

    let out = bin().arg("ingest").arg(&csv).output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    // 2011-2013 includes the 2012 leap day
    assert!(text.contains("hours:      26304"), "{text}");
    assert!(text.contains("missing:"), "{text}");
}

#[test]
fn usage_errors_exit_1() {
    let out = bin().args(["train", "--cell", "bogus", "x.csv", "m.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("\"exit_code\":1"));

    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // single machine-readable line on stderr
    assert_eq!(stderr(&out).trim().lines().count(), 1);
}

#[test]
fn data_errors_exit_2_with_line_numbers() {
    let dir = workdir("data-err");
    let bad = dir.join("bad.csv");
    std::fs::write(&bad, "timestamp,volume\n2011-01-01T00,5\n2011-01-01T02,6\n").unwrap();
    let out = bin().arg("ingest").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let zero = dir.join("zero.csv");
    std::fs::write(&zero, "timestamp,volume\n2011-01-01T00,5\n2011-01-01T01,0\n").unwrap();
    let out = bin().arg("ingest").arg(&zero).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.join("does-not-exist.csv");
    let out = bin().arg("ingest").arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_reports_three_passes() {
    let out = bin().arg("gradcheck").output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.matches("PASS").count(), 3, "{text}");
}

#[test]
fn impute_reports_fill_count_and_rmse() {
    let dir = workdir("impute");
    let spec = write_spec(&dir, "");
    let csv = dir.join("series.csv");
    bin().arg("synth").arg(&spec).arg(&csv).output().unwrap();

    let filled = dir.join("filled.csv");
    let out = bin()
        .args(["impute", "--method", "median", "--truth"])
        .arg(dir.join("series.complete.csv"))
        .arg(&csv)
        .arg(&filled)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("filled:"), "{text}");
    assert!(text.contains("rmse:"), "{text}");

    // idempotence with respect to inputs: the source file is untouched
    let before = std::fs::read_to_string(&csv).unwrap();
    let out = bin()
        .args(["impute", "--method", "mean"])
        .arg(&csv)
        .arg(dir.join("filled2.csv"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(before, std::fs::read_to_string(&csv).unwrap());

    // masking has no standalone fill semantics
    let out = bin()
        .args(["impute", "--method", "masking"])
        .arg(&csv)
        .arg(dir.join("filled3.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_predict_evaluate_pipeline() {
    let dir = workdir("pipeline");
    let spec = write_spec(&dir, "");
    let csv = dir.join("series.csv");
    bin().arg("synth").arg(&spec).arg(&csv).output().unwrap();

    let model = dir.join("model.json");
    let out = bin()
        .args([
            "train",
            "--cell",
            "gru",
            "--treatment",
            "mean",
            "--horizon-years",
            "1",
            "--hidden",
            "4",
            "--epochs",
            "1",
            "--stride",
            "336",
            "--test-hours",
            "8760",
            "--seed",
            "2",
        ])
        .arg(&csv)
        .arg(&model)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("epoch   1"));

    let pred = dir.join("pred.csv");
    let out = bin().arg("predict").arg(&model).arg(&csv).arg(&pred).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let table = std::fs::read_to_string(&pred).unwrap();
    assert!(table.starts_with("timestamp,volume\n"));
    assert_eq!(table.lines().count(), 26304 + 1);

    let out = bin().arg("evaluate").arg(&model).arg(&csv).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("2013"), "{text}");
    assert!(text.contains('%'), "{text}");

    // model trained on one station refuses another station's series
    let other = dir.join("other.csv");
    std::fs::copy(&csv, &other).unwrap();
    let out = bin().arg("predict").arg(&model).arg(&other).arg(dir.join("p2.csv")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grid_on_gap_free_input_ties_within_cells() {
    let dir = workdir("grid");
    let spec_path = dir.join("spec.txt");
    std::fs::write(
        &spec_path,
        "start_year = 2011\nyears = 3\nbase_volume = 600\nnoise_std = 0.03\nmissing_rate = 0\nseed = 8\n",
    )
    .unwrap();
    let csv = dir.join("series.csv");
    bin().arg("synth").arg(&spec_path).arg(&csv).output().unwrap();

    let report = dir.join("report.json");
    let out = bin()
        .args([
            "grid",
            "--hidden",
            "4",
            "--epochs",
            "1",
            "--stride",
            "336",
            "--seed",
            "2",
            "--jobs",
            "2",
            "--test-years",
            "2013",
            "--report",
        ])
        .arg(&report)
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("best 2013"), "{}", stdout(&out));

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 21);
    // gap-free input: the 7 treatments tie within each cell kind
    let mut distinct: Vec<String> = rows
        .iter()
        .map(|r| r["accuracy_pct"].to_string())
        .collect();
    distinct.sort();
    distinct.dedup();
    assert!(distinct.len() <= 3, "distinct accuracies: {distinct:?}");
}
