use std::path::Path;
use std::process::{Command, Output};

fn mvmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvmr")).args(args).output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        "p = 32\nK = 2\ntrials = 6\nbase_seed = 5\nn_grid = [30, 120]\n\n\
         [coefficient_model]\nkind = \"identical_uniform\"\nsupport_rule = \"stride_8\"\n",
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn gen_then_solve_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let problem = dir.path().join("problem.json");
    let truth = dir.path().join("truth.csv");
    let out = mvmr(&[
        "gen",
        "--config",
        &config,
        "--seed",
        "3",
        "--n",
        "200",
        "--out",
        problem.to_str().unwrap(),
        "--truth-out",
        truth.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&truth).unwrap().lines().count(), 32);

    let report = dir.path().join("report.json");
    let mut estimates = Vec::new();
    for method in ["bcd", "pg"] {
        let out = mvmr(&[
            "solve",
            "--problem",
            problem.to_str().unwrap(),
            "--lambda",
            "0.05",
            "--tol",
            "1e-9",
            "--max-iters",
            "200000",
            "--method",
            method,
            "--out",
            report.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(json["converged"], true);
        estimates.push(json["objective_value"].as_f64().unwrap());
    }
    assert!((estimates[0] - estimates[1]).abs() <= 1e-6 * estimates[0].abs());
}

#[test]
fn theory_reports_identity_quantities() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = mvmr(&["theory", "--config", &config]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let entry = &json[0];
    assert_eq!(entry["p"], 32);
    assert_eq!(entry["K"], 2);
    assert_eq!(entry["s"], 4);
    // Σ = I, identical rows with norm 1: ψ = s/K, γ = 1.
    assert!((entry["conditions"]["psi"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((entry["conditions"]["gamma"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let expected_scale = 2.0 * 2.0 * 28f64.ln();
    assert!((entry["psi_scale"].as_f64().unwrap() - expected_scale).abs() < 1e-9);
}

#[test]
fn sweep_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = mvmr(&["sweep", "--config", &config, "--out", out_dir.to_str().unwrap(), "--axis", "theta-slog"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("p,K,s,coefficient_model,"));
    assert_eq!(csv.lines().count(), 3);
    assert!(out_dir.join("sweep.json").exists());
    assert!(out_dir.join("report.md").exists());
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "p = 32\nK = 2\nalpha = 0.1\ns = 4\n[coefficient_model]\nkind = \"identical_uniform\"\nsupport_rule = \"stride_8\"\n").unwrap();
    let out = mvmr(&["theory", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let config = write_config(dir.path());
    let out = mvmr(&["sweep", "--config", &config, "--out", dir.path().join("o").to_str().unwrap(), "--jobs", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let out = mvmr(&["solve", "--problem", dir.path().join("missing.json").to_str().unwrap(), "--lambda", "1"]);
    assert_eq!(out.status.code(), Some(2));
}
