use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pcrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcrank"))
        .args(args)
        .env_remove("PCRANK_SEED")
        .output()
        .expect("binary runs")
}

fn report(args: &[&str]) -> Value {
    let out = pcrank(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn pvalues(r: &Value) -> Vec<f64> {
    r["tests"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["p_value"].as_f64().unwrap())
        .collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn exam_median_step_pvalues() {
    let r = report(&["test", "builtin:exam", "--method", "csv", "--noise-est", "median"]);
    let sigma2 = r["noise"][0]["sigma2"].as_f64().unwrap();
    assert!((sigma2 - 131.332).abs() < 0.5, "{sigma2}");
    for (got, want) in pvalues(&r).iter().zip([0.000, 0.015, 0.573, 0.940]) {
        assert!((got - want).abs() < 0.01, "{got} vs {want}");
    }
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["config"]["noise_variant"], "median");
}

#[test]
fn exam_rank_by_noise_estimator() {
    let med = report(&["rank", "builtin:exam", "--noise-est", "median", "--rule", "strong", "--alpha", "0.05"]);
    assert_eq!(med["decision"]["kappa_hat"], 1);
    let cv = report(&["rank", "builtin:exam", "--noise-est", "cv-dfc"]);
    assert_eq!(cv["decision"]["kappa_hat"], 2);
    let sigma2 = cv["noise"][0]["sigma2"].as_f64().unwrap();
    assert!((sigma2 / 75.957 - 1.0).abs() < 0.15, "{sigma2}");
    assert_eq!(cv["config"]["cv"]["folds"], 20);
}

#[test]
fn exam_noise_command() {
    let r = report(&["noise", "builtin:exam", "--variant", "cv-dfc", "--folds", "20", "--c", "0.6667"]);
    let sigma2 = r["noise"][0]["sigma2"].as_f64().unwrap();
    assert!((sigma2 / 75.957 - 1.0).abs() < 0.15, "{sigma2}");
    let med = report(&["noise", "builtin:exam", "--variant", "median"]);
    assert!((med["noise"][0]["sigma2"].as_f64().unwrap() - 131.332).abs() < 0.5);
}

#[test]
fn simple_estimator_with_zero_kappa_is_mean_square() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "y.csv", "1,2,0\n-1,3,2\n4,0,1\n2,2,-2\n");
    let r = report(&["noise", &f, "--variant", "simple", "--kappa", "0"]);
    let want = (1 + 4 + 1 + 9 + 4 + 16 + 1 + 4 + 4 + 4) as f64 / 12.0;
    assert!((r["noise"][0]["sigma2"].as_f64().unwrap() - want).abs() < 1e-12);
}

#[test]
fn scree_lists_singular_values() {
    let out = pcrank(&["test", "builtin:exam", "--scree"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("1\t994.88"));
}

#[test]
fn zero_matrix_with_known_sigma_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "zero.txt", "0 0 0\n0 0 0\n0 0 0\n0 0 0\n");
    let r = report(&["test", &f, "--method", "csv", "--sigma2", "1"]);
    let flags: Vec<&str> = r["flags"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(flags.contains(&"degenerate_interval"), "{flags:?}");
}

#[test]
fn icsv_reports_are_reproducible() {
    let args = ["test", "builtin:exam", "--method", "icsv", "--k", "2", "--seed", "7"];
    let a = pcrank(&args);
    let b = pcrank(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let r: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(r["seed"], 7);
    assert!(r["tests"][0]["diagnostics"]["mc_std_error"].as_f64().unwrap() < 0.01);
}

#[test]
fn seed_defaults_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_pcrank"))
        .args(["test", "builtin:exam", "--k", "1", "--sigma2", "100"])
        .env("PCRANK_SEED", "99")
        .output()
        .unwrap();
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["seed"], 99);
}

#[test]
fn simple_rule_with_large_pvalues_selects_zero() {
    let r = report(&["rank", "builtin:exam", "--sigma2", "1e6", "--rule", "simple"]);
    assert!(pvalues(&r).iter().all(|&p| p > 0.05));
    assert_eq!(r["decision"]["kappa_hat"], 0);
}

#[test]
fn intervals_nest_and_solve_their_equations() {
    let wide = report(&["ci", "builtin:exam", "--k", "1", "--k", "2", "--level", "0.95"]);
    let narrow = report(&["ci", "builtin:exam", "--k", "1", "--k", "2", "--level", "0.5"]);
    for (w, n) in wide["intervals"].as_array().unwrap().iter().zip(narrow["intervals"].as_array().unwrap()) {
        let (wl, wu) = (w["lower"].as_f64().unwrap(), w["upper"].as_f64().unwrap());
        let (nl, nu) = (n["lower"].as_f64().unwrap(), n["upper"].as_f64().unwrap());
        assert!(wl <= nl && nu <= wu);
        assert!((w["survival_at_lower"].as_f64().unwrap() - 0.025).abs() < 1e-4);
        assert!((w["survival_at_upper"].as_f64().unwrap() - 0.975).abs() < 1e-4);
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let out = pcrank(&["test", "builtin:exam", "--sigma2", "1", "--noise-est", "median"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pcrank(&["test", "builtin:exam", "--k", "5", "--sigma2", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pcrank(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_input_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.csv", "1,2,3\n4,five,6\n7,8,9\n");
    let out = pcrank(&["test", &f, "--sigma2", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2, column 2"), "{err}");
    assert_eq!(pcrank(&["test", "/nonexistent/matrix.csv"]).status.code(), Some(3));
}

#[test]
fn degenerate_estimate_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "zero.txt", "0 0 0\n0 0 0\n0 0 0\n0 0 0\n");
    let out = pcrank(&["test", &f, "--noise-est", "median"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn centering_is_recorded() {
    let r = report(&["test", "builtin:exam", "--center", "--k", "1", "--sigma2", "100"]);
    assert_eq!(r["input"]["centered"], true);
    let d1 = r["spectrum"][0].as_f64().unwrap();
    assert!(d1 < 994.0);
}

#[test]
fn calibration_smoke_run_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cal");
    let o = out_dir.to_str().unwrap();
    let args = [
        "simulate", "--suite", "calibration", "--n", "20", "--p", "10", "--rank", "1", "--m", "1.5", "--reps", "10",
        "--seed", "3", "--methods", "csv", "--negative-control", "--out-dir", o,
    ];
    let started = std::time::Instant::now();
    assert!(pcrank(&args).status.success());
    assert!(started.elapsed().as_secs() < 60);
    let qq = fs::read_to_string(out_dir.join("calibration_qq.tsv")).unwrap();
    let header: Vec<&str> = qq.lines().next().unwrap().split('\t').collect();
    assert_eq!(header[..4], ["rank", "m", "noise", "sigma_mode"]);
    let steps: std::collections::BTreeSet<&str> = qq
        .lines()
        .skip(1)
        .filter(|l| l.contains("\tcsv\t"))
        .map(|l| l.split('\t').nth(5).unwrap())
        .collect();
    assert_eq!(steps.len(), 4);
    assert_eq!(qq.lines().count(), 1 + 10 * 4 * 2);
    let meta: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("calibration.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["reps"], 10);
    assert_eq!(meta["designs"][0]["signal"]["n"], 20);

    let again = dir.path().join("cal2");
    let mut args2 = args.to_vec();
    let last = args2.len() - 1;
    args2[last] = again.to_str().unwrap();
    assert!(pcrank(&args2).status.success());
    assert_eq!(qq, fs::read_to_string(again.join("calibration_qq.tsv")).unwrap());
}

#[test]
fn coverage_suite_emits_rank_by_magnitude_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let out = pcrank(&[
        "simulate", "--suite", "coverage", "--rank", "0,1", "--m", "0.5,1.5", "--steps", "1,2", "--reps", "5", "--delimiter",
        "comma", "--out-dir", o,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 2 * 2);
    assert!(dir.path().join("coverage.meta.json").exists());
}

#[test]
fn rank_and_noise_suites_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let out = pcrank(&["simulate", "--suite", "rank", "--rank", "1", "--m", "2", "--reps", "5", "--out-dir", o]);
    assert!(out.status.success());
    let table = fs::read_to_string(dir.path().join("rank.tsv")).unwrap();
    assert!(table.lines().next().unwrap().contains("rate_correct"));
    let out = pcrank(&["simulate", "--suite", "noise", "--rank", "0", "--m", "0", "--sigma", "median", "--reps", "5", "--out-dir", o]);
    assert!(out.status.success());
    let out = pcrank(&["simulate", "--suite", "noise", "--reps", "5", "--out-dir", o]);
    assert_eq!(out.status.code(), Some(2));
}
