use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn ssdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssdr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ssdr(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn digest(p: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(p).unwrap()).to_vec()
}

/// Simulates a cohort into `dir/cohort` and returns the x and y paths.
fn cohort(
    dir: &Path,
    samples: usize,
    features: usize,
    support: usize,
    seed: u64,
) -> (PathBuf, PathBuf) {
    let cfg = write(
        dir,
        "sim.cfg",
        &format!("sim.n_samples = {samples}\nsim.n_features = {features}\nsim.support_count = {support}\nsim.effect = 1.5\n"),
    );
    let out = dir.join("cohort");
    ok(&[
        "simulate",
        "--config",
        s(&cfg),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    (out.join("x.tsv"), out.join("y.tsv"))
}

const FIT_CFG: &str = "penalty.lambda = 5\n";

#[test]
fn missing_phenotype_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (x, _) = cohort(dir.path(), 40, 10, 2, 1);
    let cfg = write(dir.path(), "fit.cfg", FIT_CFG);
    let out = ssdr(&[
        "fit",
        "--x",
        s(&x),
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing --y"));
}

#[test]
fn missing_input_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fit.cfg", FIT_CFG);
    let nowhere = dir.path().join("absent.tsv");
    let out = ssdr(&[
        "fit",
        "--x",
        s(&nowhere),
        "--y",
        s(&nowhere),
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = cohort(dir.path(), 40, 10, 2, 1);
    let cfg = write(dir.path(), "fit.cfg", "penalty.lamda = 5\n");
    let out = ssdr(&[
        "fit",
        "--x",
        s(&x),
        "--y",
        s(&y),
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("penalty.lamda"));
}

#[test]
fn fit_writes_its_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = cohort(dir.path(), 80, 20, 3, 2);
    let cfg = write(dir.path(), "fit.cfg", FIT_CFG);
    let out = dir.path().join("fit");
    ok(&[
        "fit",
        "--x",
        s(&x),
        "--y",
        s(&y),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    for f in ["directions.tsv", "theta.tsv", "fit.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary = read_json(&out.join("fit.json"));
    assert!(summary["max_constraint_violation"].as_f64().unwrap() <= 1e-8);
    let rows = fs::read_to_string(out.join("directions.tsv")).unwrap();
    assert_eq!(rows.lines().count(), 21);
}

#[test]
fn nonconvergence_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = cohort(dir.path(), 80, 20, 3, 2);
    let cfg = write(
        dir.path(),
        "fit.cfg",
        "penalty.lambda = 5\nsolver.outer_max_iter = 1\n",
    );
    let out = dir.path().join("fit");
    ok(&[
        "fit",
        "--x",
        s(&x),
        "--y",
        s(&y),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert_eq!(
        read_json(&out.join("fit.json"))["converged"],
        Value::Bool(false)
    );
}

#[test]
fn simulate_then_cv_gives_consistent_averages() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = cohort(dir.path(), 200, 60, 4, 3);
    let cfg = write(
        dir.path(),
        "cv.cfg",
        "penalty.lambda = 10\nplan.stages = 2x10\ncv.folds = 4\n",
    );
    let out = dir.path().join("cv");
    ok(&[
        "cv",
        "--x",
        s(&x),
        "--y",
        s(&y),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);

    let report = read_json(&out.join("cv_report.json"));
    let n_case: f64 = report["folds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["test"]["tp"].as_f64().unwrap() + f["test"]["fn"].as_f64().unwrap())
        .sum();
    let tsv = fs::read_to_string(out.join("cv_report.tsv")).unwrap();
    let avg: Vec<f64> = tsv
        .lines()
        .find(|l| l.starts_with("Average"))
        .expect("averages row")
        .split('\t')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(avg.len(), 7);
    assert!(avg[..6].iter().all(|v| (0.0..=1.0).contains(v)));
    // folds are stratified, so case shares differ by at most one sample per fold
    let share = n_case / 200.0;
    let implied = avg[3] * share + avg[4] * (1.0 - share);
    assert!((avg[5] - implied).abs() < 0.02, "{} vs {implied}", avg[5]);
    for fold in report["folds"].as_array().unwrap() {
        for part in ["train", "test"] {
            let m = &fold[part];
            let (tp, fp, tn, fn_) = ["tp", "fp", "tn", "fn"]
                .map(|k| m[k].as_f64().unwrap())
                .into();
            let n = tp + fp + tn + fn_;
            let identity = (m["sensitivity"].as_f64().unwrap() * (tp + fn_)
                + m["specificity"].as_f64().unwrap() * (tn + fp))
                / n;
            assert!((m["accuracy"].as_f64().unwrap() - identity).abs() < 1e-12);
        }
    }
}

#[test]
fn assoc_matches_direct_chi_square() {
    let dir = tempfile::tempdir().unwrap();
    // case genotype counts [30, 15, 5], control [10, 20, 20]
    let mut x = String::from("id\tsnp\n");
    let mut y = String::new();
    let mut row = 0;
    for (is_case, counts) in [(1, [30, 15, 5]), (0, [10, 20, 20])] {
        for (g, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                x += &format!("s{row}\t{g}\n");
                y += &format!("s{row}\t{is_case}\n");
                row += 1;
            }
        }
    }
    let xp = write(dir.path(), "x.tsv", &x);
    let yp = write(dir.path(), "y.tsv", &y);
    let out = dir.path().join("assoc");
    ok(&["assoc", "--x", s(&xp), "--y", s(&yp), "--out", s(&out)]);
    let tsv = fs::read_to_string(out.join("chi2.tsv")).unwrap();
    let fields: Vec<&str> = tsv.lines().nth(1).unwrap().split('\t').collect();
    let stat: f64 = fields[1].parse().unwrap();
    // direct sum of (O - E)^2 / E
    let (case, control) = ([30.0, 15.0, 5.0], [10.0, 20.0, 20.0]);
    let mut want = 0.0;
    for g in 0..3 {
        let col = case[g] + control[g];
        for (obs, total) in [(case[g], 50.0), (control[g], 50.0)] {
            let e: f64 = total * col / 100.0;
            want += (obs - e).powi(2) / e;
        }
    }
    assert_eq!(fields[0], "snp");
    assert!((stat - want).abs() < 1e-10);
    assert_eq!(fields[2], "2");
}

#[test]
fn cad_shaped_plan_keeps_forty_thousand_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = cohort(dir.path(), 24, 40_000, 10, 4);
    let cfg = write(
        dir.path(),
        "screen.cfg",
        "penalty.lambda = 0\nadmm.max_iter = 5\nsolver.outer_max_iter = 2\nplan.stages = 20x2000, 4x1500\n",
    );
    let out = dir.path().join("screen");
    ok(&[
        "screen",
        "--x",
        s(&x),
        "--y",
        s(&y),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    let summary = read_json(&out.join("selection.json"));
    assert_eq!(summary["stages"][0]["input_features"], 40_000);
    assert_eq!(summary["stages"][0]["kept_features"], 40_000);
    assert_eq!(summary["stages"][1]["kept_features"], 6_000);
    assert_eq!(summary["pool_size"], 6_000);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = cohort(dir.path(), 120, 80, 4, 5);
    let cfg = write(
        dir.path(),
        "screen.cfg",
        "penalty.lambda = 8\nplan.stages = 4x10\n",
    );
    let mut runs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("screen{threads}"));
        ok(&[
            "screen",
            "--x",
            s(&x),
            "--y",
            s(&y),
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--threads",
            threads,
        ]);
        runs.push(out);
    }
    for f in [
        "selection.tsv",
        "selection.json",
        "model.json",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(runs[0].join(f)).unwrap(),
            fs::read(runs[1].join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn rerun_reproduces_and_inputs_stay_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = cohort(dir.path(), 120, 40, 4, 6);
    let cfg = write(
        dir.path(),
        "cv.cfg",
        "penalty.lambda = 8\nplan.stages = 2x10\ncv.folds = 3\n",
    );
    let before = [digest(&x), digest(&y), digest(&cfg)];
    let first = dir.path().join("first");
    ok(&[
        "cv",
        "--x",
        s(&x),
        "--y",
        s(&y),
        "--config",
        s(&cfg),
        "--out",
        s(&first),
        "--seed",
        "9",
    ]);
    ok(&[
        "assoc",
        "--x",
        s(&x),
        "--y",
        s(&y),
        "--out",
        s(&dir.path().join("assoc")),
    ]);
    assert_eq!(before, [digest(&x), digest(&y), digest(&cfg)]);

    let second = dir.path().join("second");
    ok(&[
        "rerun",
        "--manifest",
        s(&first.join("manifest.json")),
        "--out",
        s(&second),
    ]);
    for f in ["cv_report.tsv", "cv_report.json"] {
        assert_eq!(digest(&first.join(f)), digest(&second.join(f)), "{f}");
    }
    let manifest = read_json(&first.join("manifest.json"));
    assert_eq!(manifest["seed"], 9);
    assert!(manifest["config_sha256"]
        .as_str()
        .is_some_and(|h| h.len() == 64));
}

#[test]
fn rerun_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = cohort(dir.path(), 60, 12, 2, 7);
    let cfg = write(dir.path(), "fit.cfg", FIT_CFG);
    let first = dir.path().join("first");
    ok(&[
        "fit",
        "--x",
        s(&x),
        "--y",
        s(&y),
        "--config",
        s(&cfg),
        "--out",
        s(&first),
    ]);
    let text = fs::read_to_string(&y).unwrap();
    let flipped = text.replacen("\t0\n", "\t1\n", 1);
    assert_ne!(text, flipped);
    fs::write(&y, flipped).unwrap();
    let out = ssdr(&[
        "rerun",
        "--manifest",
        s(&first.join("manifest.json")),
        "--out",
        s(&dir.path().join("second")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn saved_model_predicts_new_samples() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = cohort(dir.path(), 100, 20, 3, 8);
    let cfg = write(dir.path(), "fit.cfg", FIT_CFG);
    let fit_dir = dir.path().join("fit");
    ok(&[
        "fit",
        "--x",
        s(&x),
        "--y",
        s(&y),
        "--config",
        s(&cfg),
        "--out",
        s(&fit_dir),
    ]);
    let out = dir.path().join("pred");
    ok(&[
        "predict",
        "--x",
        s(&x),
        "--y",
        s(&y),
        "--model",
        s(&fit_dir.join("model.json")),
        "--out",
        s(&out),
    ]);
    let preds = fs::read_to_string(out.join("predictions.tsv")).unwrap();
    assert_eq!(preds.lines().count(), 101);
    let m = read_json(&out.join("metrics.json"));
    assert!(m["accuracy"].as_f64().unwrap() > 0.5);
}
