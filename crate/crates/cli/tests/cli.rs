use std::path::Path;
use std::process::{Command, Output};

use jne_cli::io::{ingest_csv, read_matrix_csv, ConfounderReduce};

fn jne(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jne")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap();
    serde_json::from_str(line).unwrap()
}

#[test]
fn generate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    assert!(jne(&["generate", "--output-dir", &s(&gen), "--seed", "2", "--p", "5"]).status.success());
    let data = ingest_csv(&gen.join("data.csv"), &["g".into()], ConfounderReduce::SingleColumn).unwrap();
    assert_eq!((data.dataset.n(), data.dataset.p()), (202, 5));

    let est = dir.path().join("est");
    let out = jne(&["estimate", "--input", &s(&gen.join("data.csv")), "--output-dir", &s(&est), "--write-nuisance"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let omega = read_matrix_csv(&est.join("omega0.csv")).unwrap();
    assert_eq!(omega.order(), 5);
    assert!(omega.is_symmetric());
    let diag: serde_json::Value = serde_json::from_slice(&std::fs::read(est.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["method"], "jne");
    assert_eq!(diag["columns"].as_array().unwrap().len(), 5);
    assert_eq!(std::fs::read_dir(est.join("nuisance")).unwrap().count(), 202);
}

#[test]
fn lambda_grid_uses_aic() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    assert!(jne(&["generate", "--output-dir", &s(&gen), "--p", "4"]).status.success());
    let est = dir.path().join("est");
    let out = jne(&[
        "estimate", "--input", &s(&gen.join("data.csv")), "--output-dir", &s(&est),
        "--method", "re-clime", "--lambda-grid", "0.039,0.078,0.117,0.156",
    ]);
    assert!(out.status.success());
    let diag: serde_json::Value = serde_json::from_slice(&std::fs::read(est.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["aic"].as_array().unwrap().len(), 4);
}

fn rank_one_csv(dir: &Path) -> String {
    let path = dir.join("rank_one.csv");
    std::fs::write(&path, "a,b,g\n1,1,0\n2,2,1\n3,3,2\n-1,-1,3\n").unwrap();
    s(&path)
}

#[test]
fn infeasible_run_exits_three_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = rank_one_csv(dir.path());
    let out = jne(&["estimate", "--input", &input, "--output-dir", &s(&dir.path().join("o")), "--lambda", "0", "--bandwidth", "5"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "InfeasibleColumn");
    assert_eq!(err["exit_code"], 3);
    assert!(!dir.path().join("o").join("omega0.csv").exists());
}

#[test]
fn auto_lambda_doubles_until_feasible() {
    let dir = tempfile::tempdir().unwrap();
    let input = rank_one_csv(dir.path());
    let out_dir = dir.path().join("o");
    let out = jne(&["estimate", "--input", &input, "--output-dir", &s(&out_dir), "--lambda", "0.01", "--auto-lambda", "--bandwidth", "5"]);
    assert!(out.status.success());
    let diag: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("diagnostics.json")).unwrap()).unwrap();
    let attempts: Vec<f64> = diag["lambda_attempts"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(attempts.len() > 1);
    assert!(attempts.windows(2).all(|w| w[1] == 2.0 * w[0]));
    assert_eq!(diag["lambda"].as_f64().unwrap(), *attempts.last().unwrap());
}

#[test]
fn data_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = rank_one_csv(dir.path());
    let out = jne(&["estimate", "--input", &input, "--output-dir", &s(dir.path()), "--confounder-cols", "motion"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "MissingColumn");

    let out = jne(&["estimate", "--input", &input, "--output-dir", &s(dir.path()), "--lambda", "-1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = jne(&["estimate", "--input", &input, "--output-dir", &s(dir.path()), "--lambda", "0.1", "--lambda-grid", "0.1,0.2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_rows_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = jne(&[
        "sweep", "--output-dir", &s(&out_dir), "--p", "4", "--seeds", "2",
        "--methods", "jne,ke-clime,re-clime,oracle", "--train-frac", "0.7", "--threads", "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut summary = csv::Reader::from_path(out_dir.join("summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = summary.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let medians: Vec<(String, f64)> = rows.iter().map(|r| (r[1].to_string(), r[3].parse().unwrap())).collect();
    let oracle = medians.iter().find(|(m, _)| m == "oracle").unwrap().1;
    assert_eq!(oracle, 0.0);
    assert!(medians.iter().all(|(_, v)| *v >= oracle));

    let mut runs = csv::Reader::from_path(out_dir.join("runs.csv")).unwrap();
    let jne_rows = runs.records().map(Result::unwrap).filter(|r| &r[1] == "0" && &r[2] == "jne").count();
    assert_eq!(jne_rows, 4);
    assert!(out_dir.join("bandwidths.csv").exists());
}

#[test]
fn bandwidth_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    assert!(jne(&["generate", "--output-dir", &s(&gen), "--p", "3"]).status.success());
    let data = s(&gen.join("data.csv"));
    let bw = dir.path().join("bw");
    assert!(jne(&["bandwidth", "--input", &data, "--output-dir", &s(&bw), "--per-entry"]).status.success());
    assert_eq!(read_matrix_csv(&bw.join("bandwidth.csv")).unwrap().order(), 3);

    let ev = dir.path().join("ev");
    let out = jne(&[
        "evaluate", "--input", &data, "--output-dir", &s(&ev), "--seed", "1",
        "--target", &s(&gen.join("target.csv")), "--method", "ke-clime",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(report["n_train"], 141);
    assert_eq!(report["n_test"], 61);
    assert!(report["heldout_loglik"].as_f64().unwrap().is_finite());
}
