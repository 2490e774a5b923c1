use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn kgb(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgb"))
        .args(args)
        .current_dir(cwd)
        .env("KGB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = kgb(args, cwd);
    assert!(
        out.status.success(),
        "kgb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_regression_csv(path: &Path) {
    let mut text = String::from("a,b,id,y\n");
    for i in 0..40 {
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 0.11).cos();
        text.push_str(&format!("{a},{b},{i},{}\n", a - 2.0 * b));
    }
    fs::write(path, text).unwrap();
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn training_is_deterministic() {
    let dir = TempDir::new().unwrap();
    write_regression_csv(&dir.path().join("d.csv"));
    let args = |out| {
        vec![
            "train",
            "--data",
            "d.csv",
            "--target",
            "y",
            "--exclude",
            "id",
            "--iterations",
            "30",
            "--out",
            out,
        ]
    };
    ok(&args("r1"), dir.path());
    ok(&args("r2"), dir.path());
    let m1 = fs::read(dir.path().join("r1/model.json")).unwrap();
    let m2 = fs::read(dir.path().join("r2/model.json")).unwrap();
    assert_eq!(m1, m2);
    let model = read_json(&dir.path().join("r1/model.json"));
    assert_eq!(model["feature_names"], serde_json::json!(["a", "b"]));
    let manifest = read_json(&dir.path().join("r1/manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["iterations"], 30);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_iterations_predicts_zero() {
    let dir = TempDir::new().unwrap();
    write_regression_csv(&dir.path().join("d.csv"));
    ok(
        &[
            "train",
            "--data",
            "d.csv",
            "--target",
            "y",
            "--exclude",
            "id",
            "--iterations",
            "0",
            "--out",
            "m",
        ],
        dir.path(),
    );
    ok(
        &[
            "predict",
            "--model",
            "m/model.json",
            "--queries",
            "d.csv",
            "--out",
            "p",
        ],
        dir.path(),
    );
    let mut rdr = csv::Reader::from_path(dir.path().join("p/predictions.csv")).unwrap();
    let preds: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect();
    assert_eq!(preds.len(), 40);
    assert!(preds.iter().all(|&p| p == 0.0));
}

#[test]
fn trained_model_fits_training_data() {
    let dir = TempDir::new().unwrap();
    write_regression_csv(&dir.path().join("d.csv"));
    ok(
        &[
            "train",
            "--data",
            "d.csv",
            "--target",
            "y",
            "--exclude",
            "id",
            "--iterations",
            "200",
            "--depth",
            "3",
            "--bins",
            "16",
            "--trace",
            "--out",
            "m",
        ],
        dir.path(),
    );
    let trace = fs::read_to_string(dir.path().join("m/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,mse,factor"));
    assert_eq!(trace.lines().count(), 202);
    ok(
        &[
            "predict",
            "--model",
            "m/model.json",
            "--queries",
            "d.csv",
            "--out",
            "p",
        ],
        dir.path(),
    );
    let mut preds = csv::Reader::from_path(dir.path().join("p/predictions.csv")).unwrap();
    let mut data = csv::Reader::from_path(dir.path().join("d.csv")).unwrap();
    let mse: f64 = preds
        .records()
        .zip(data.records())
        .map(|(p, d)| {
            let p: f64 = p.unwrap()[1].parse().unwrap();
            let y: f64 = d.unwrap()[3].parse().unwrap();
            (p - y).powi(2)
        })
        .sum::<f64>()
        / 40.0;
    assert!(mse < 0.05, "training mse {mse}");
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    write_regression_csv(&dir.path().join("d.csv"));
    let missing = kgb(
        &["train", "--data", "d.csv", "--target", "nope", "--out", "o"],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope"));
    let bad_lr = kgb(
        &[
            "train", "--data", "d.csv", "--target", "y", "--lr=0", "--out", "o",
        ],
        dir.path(),
    );
    assert_eq!(bad_lr.status.code(), Some(2));
    let bad_sigma = kgb(
        &[
            "sample",
            "--data",
            "d.csv",
            "--target",
            "y",
            "--sigma=0",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(bad_sigma.status.code(), Some(2));
    let no_args = kgb(&["train"], dir.path());
    assert_eq!(no_args.status.code(), Some(2));
}

#[test]
fn missing_file_exits_one() {
    let dir = TempDir::new().unwrap();
    let out = kgb(
        &[
            "train",
            "--data",
            "absent.csv",
            "--target",
            "y",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_member_omits_variance() {
    let dir = TempDir::new().unwrap();
    write_regression_csv(&dir.path().join("d.csv"));
    let out = ok(
        &[
            "sample",
            "--data",
            "d.csv",
            "--target",
            "y",
            "--exclude",
            "id",
            "--members",
            "1",
            "--iterations",
            "20",
            "--out",
            "s",
        ],
        dir.path(),
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let summary = fs::read_to_string(dir.path().join("s/summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "query_id,mean");
}

#[test]
fn sample_writes_members_and_summary() {
    let dir = TempDir::new().unwrap();
    write_regression_csv(&dir.path().join("d.csv"));
    let args = |out| {
        vec![
            "sample",
            "--data",
            "d.csv",
            "--target",
            "y",
            "--exclude",
            "id",
            "--members",
            "3",
            "--iterations",
            "20",
            "--prior-iterations",
            "5",
            "--seed",
            "9",
            "--out",
            out,
        ]
    };
    ok(&args("s"), dir.path());
    ok(&args("t"), dir.path());
    for i in 0..3 {
        let name = format!("members/member_{i:04}.json");
        assert_eq!(
            fs::read(dir.path().join("s").join(&name)).unwrap(),
            fs::read(dir.path().join("t").join(&name)).unwrap()
        );
    }
    let mut rdr = csv::Reader::from_path(dir.path().join("s/summary.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["query_id", "mean", "variance", "predictive_variance"]
    );
    for r in rdr.records() {
        let r = r.unwrap();
        let var: f64 = r[2].parse().unwrap();
        let pred: f64 = r[3].parse().unwrap();
        assert!(var >= 0.0);
        assert!((pred - var - 1e-8).abs() < 1e-15);
    }
    let manifest = read_json(&dir.path().join("s/manifest.json"));
    let lambda = manifest["extra"]["effective_lambda"].as_f64().unwrap();
    assert!((lambda - 1e-4).abs() < 1e-16);
    ok(
        &[
            "predict",
            "--model",
            "s/members/member_0001.json",
            "--queries",
            "d.csv",
            "--out",
            "p",
        ],
        dir.path(),
    );
}

#[test]
fn evaluate_scores_perfect_uncertainty() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("target,mean,variance,ood\n");
    for i in 0..20 {
        let err = i as f64 * 0.1;
        let ood = u8::from(i >= 10);
        text.push_str(&format!("1.0,{},{},{ood}\n", 1.0 + err, err * err));
    }
    fs::write(dir.path().join("p.csv"), text).unwrap();
    ok(
        &[
            "evaluate",
            "--predictions",
            "p.csv",
            "--ood-column",
            "ood",
            "--out",
            "e",
        ],
        dir.path(),
    );
    let metrics = read_json(&dir.path().join("e/metrics.json"));
    assert!((metrics["prr"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(metrics["auc_roc"].as_f64().unwrap(), 1.0);
    assert_eq!(metrics["points"], 20);
    let curve = fs::read_to_string(dir.path().join("e/rejection_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 102);

    let missing = kgb(
        &[
            "evaluate",
            "--predictions",
            "p.csv",
            "--uncertainty-column",
            "sd",
            "--out",
            "e",
        ],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn evaluate_reports_undefined_prr_as_null() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("p.csv"),
        "target,mean,variance\n1,1,0.5\n2,2,0.1\n",
    )
    .unwrap();
    let out = ok(
        &["evaluate", "--predictions", "p.csv", "--out", "e"],
        dir.path(),
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let metrics = read_json(&dir.path().join("e/metrics.json"));
    assert!(metrics["prr"].is_null());
    assert_eq!(metrics["rmse"].as_f64().unwrap(), 0.0);
}

#[test]
fn oracle_verify_passes_on_bundled_fixture() {
    let dir = TempDir::new().unwrap();
    let out = ok(
        &[
            "oracle-verify",
            "--iterations",
            "100000",
            "--trials",
            "2",
            "--law-draws",
            "5000",
            "--out",
            "o",
        ],
        dir.path(),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS ridgeless_matches_reference"));
    assert!(!stdout.contains("FAIL"));
    let report = read_json(&dir.path().join("o/report.json"));
    assert_eq!(report["passed"], true);
    for f in [
        "convergence.csv",
        "convergence_half_lr.csv",
        "convergence.json",
        "manifest.json",
    ] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
}

#[test]
fn oracle_verify_fails_on_tampered_reference() {
    let dir = TempDir::new().unwrap();
    let fixture = include_str!("../../core/fixtures/krr8.csv").replacen(",0.8\n", ",0.9\n", 1);
    fs::write(dir.path().join("t.csv"), fixture).unwrap();
    let out = kgb(
        &[
            "oracle-verify",
            "--data",
            "t.csv",
            "--target",
            "y",
            "--reference-column",
            "f_star",
            "--trials",
            "0",
            "--law-draws",
            "2000",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL ridgeless_matches_reference"));
}

#[test]
fn oracle_verify_refuses_large_enumerations() {
    let dir = TempDir::new().unwrap();
    write_regression_csv(&dir.path().join("d.csv"));
    let out = kgb(
        &[
            "oracle-verify",
            "--data",
            "d.csv",
            "--target",
            "y",
            "--exclude",
            "id",
            "--bins",
            "16",
            "--depth",
            "5",
            "--max-structures",
            "1000",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn synthetic_heart_writes_split() {
    let dir = TempDir::new().unwrap();
    ok(
        &[
            "synthetic-heart",
            "--points",
            "500",
            "--seed",
            "3",
            "--out",
            "h",
        ],
        dir.path(),
    );
    let train = fs::read_to_string(dir.path().join("h/train.csv")).unwrap();
    let eval = fs::read_to_string(dir.path().join("h/eval.csv")).unwrap();
    assert_eq!(train.lines().next().unwrap(), "x,y,target");
    assert_eq!(eval.lines().next().unwrap(), "x,y,target,in_domain");
    assert_eq!(eval.lines().count(), 501);
    let inside = eval.lines().skip(1).filter(|l| l.ends_with(",1")).count();
    assert_eq!(train.lines().count() - 1, inside);
    assert!(inside > 0 && inside < 500);
    let bad = kgb(
        &[
            "synthetic-heart",
            "--domain-variant",
            "triangle",
            "--out",
            "h",
        ],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
}
