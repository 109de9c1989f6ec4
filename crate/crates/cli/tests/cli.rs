use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lvquant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvquant")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lvquant(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "seed = 11\n[phantom]\nn = 4\n[phantom.spec]\nphases = 4\nn_slices = 4\n";

/// Generates the small reference cohort and measures it from its own labels.
fn reference_report(dir: &Path) {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    ok(&["phantom", "gen", "--config", p(&cfg), "--out", p(&dir.join("corpus"))]);
    ok(&["quantify", "--config", p(&cfg), "--corpus", p(&dir.join("corpus")), "--reference-labels", "--out", p(&dir.join("q"))]);
    ok(&["report", "--report", p(&dir.join("q/report.json")), "--out", p(&dir.join("r"))]);
}

#[test]
fn unknown_architecture_is_a_usage_error() {
    let out = lvquant(&["paramcount", "--arch", "resnet"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown architecture"));
}

#[test]
fn runtime_errors_exit_one_with_a_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = lvquant(&["quantify", "--corpus", p(&dir.path().join("missing")), "--reference-labels", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn conflicting_toggles_are_rejected() {
    let out = lvquant(&["paramcount", "--residual-input", "--no-residual-input"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn paramcount_reports_count_and_relative_size() {
    assert_eq!(ok(&["paramcount"]).trim(), "32438147 +0.00%");
    assert_eq!(ok(&["paramcount", "--arch", "u_xception", "--shrink", "2"]).trim(), "23587971 -27.28%");
    assert_eq!(ok(&["paramcount", "--arch", "u_inception"]).trim(), "15485059 -52.26%");
}

#[test]
fn gradcheck_passes_for_each_family() {
    for arch in ["unet", "uinception", "uxception"] {
        let out = ok(&["gradcheck", "--arch", arch, "--stride", "4"]);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["passed"], true, "{arch}: {out}");
    }
}

#[test]
fn effective_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    ok(&["phantom", "gen", "--config", p(&cfg), "--seed", "12", "--n", "3", "--out", p(dir.path())]);
    let echo = fs::read_to_string(dir.path().join("run_config.toml")).unwrap();
    assert!(echo.contains("seed = 12"), "{echo}");
    assert!(echo.contains("n = 3"), "{echo}");
    assert!(echo.contains("[train.params]"), "{echo}");
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("cohort.json")).unwrap()).unwrap();
    assert_eq!(index["subjects"].as_array().unwrap().len(), 3);
}

#[test]
fn reference_report_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    reference_report(dir.path());
    let summary = fs::read_to_string(dir.path().join("r/summary.csv")).unwrap();
    let golden = include_str!("golden/reference_summary.csv");
    assert_eq!(summary, golden);
    let points = fs::read_to_string(dir.path().join("r/agreement_points.csv")).unwrap();
    assert_eq!(points.lines().next().unwrap(), "measure,id,truth,predicted,mean,difference");
    assert_eq!(points.lines().count(), 1 + 6 * 4);
}

#[test]
fn reference_run_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    reference_report(a.path());
    reference_report(b.path());
    for f in ["q/report.json", "q/report.csv", "r/summary.csv", "r/agreement_points.csv", "corpus/cohort.json", "corpus/P002/phase_03.cqv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
