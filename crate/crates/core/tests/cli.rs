//! End-to-end tests of the command-line interface, driving the built binary
//! the way a user would.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tmixreg")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tmixreg-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary should execute")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn nu_grid_prints_and_writes_json() {
    let dir = workdir("nugrid");
    let stdout = run_ok(&[
        "nu-grid",
        "--min",
        "2.8",
        "--max",
        "14.4",
        "--k",
        "4",
        "--reference",
        "2.8,3.2,3.9,14.4",
        "--out",
        &path(&dir),
    ]);
    assert!(stdout.contains("kld"));
    assert!(stdout.contains("max |delta|"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("nu_grid.json")).unwrap()).unwrap();
    let nu = report["nu"].as_array().unwrap();
    assert_eq!(nu.len(), 4);
    assert!((nu[1].as_f64().unwrap() - 3.2).abs() < 0.3);
    assert!((nu[2].as_f64().unwrap() - 3.9).abs() < 0.3);
}

#[test]
fn nu_grid_endpoints_only_for_k2() {
    let dir = workdir("nugrid2");
    let stdout = run_ok(&["nu-grid", "--min", "2.8", "--max", "14.4", "--k", "2", "--out", &path(&dir)]);
    assert!(stdout.contains("2.8"));
    assert!(stdout.contains("14.4"));
}

#[test]
fn nu_grid_rejects_min_below_two() {
    let out = run(&["nu-grid", "--min", "1.5", "--max", "14.4", "--k", "4"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("exceed 2"), "stderr: {stderr}");
}

#[test]
fn simulate_writes_dataset_truth_and_self_check() {
    let dir = workdir("sim");
    let stdout = run_ok(&[
        "simulate",
        "--study",
        "study1",
        "--n",
        "2500",
        "--seed",
        "9",
        "--out",
        &path(&dir),
    ]);
    assert!(stdout.contains("closed form 3.975000"));
    let text = std::fs::read_to_string(dir.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 2501); // header + rows
    assert!(dir.join("truth.json").exists());
    let check: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("self_check.json")).unwrap())
            .unwrap();
    assert!((check["closed_form_error_variance"].as_f64().unwrap() - 3.975).abs() < 1e-9);

    // Re-run with the same seed reproduces the dataset byte for byte.
    let dir2 = workdir("sim-re");
    run_ok(&["simulate", "--study", "study1", "--n", "2500", "--seed", "9", "--out", &path(&dir2)]);
    assert_eq!(
        std::fs::read(dir.join("dataset.csv")).unwrap(),
        std::fs::read(dir2.join("dataset.csv")).unwrap()
    );

    let stdout2 = run_ok(&[
        "simulate",
        "--study",
        "study2",
        "--n",
        "500",
        "--seed",
        "3",
        "--out",
        &path(&dir2),
    ]);
    assert!(stdout2.contains("closed form 4.964"));
}

#[test]
fn fit_single_draw_and_determinism() {
    let dir = workdir("fit");
    run_ok(&["simulate", "--study", "study1", "--n", "300", "--seed", "5", "--out", &path(&dir)]);
    let data = path(&dir.join("dataset.csv"));

    // iterations = burn_in + 1 stores exactly one draw.
    let one = workdir("fit-one");
    run_ok(&[
        "fit", "--data", &data, "--covariates", "x1,x2", "--j", "2", "--nu", "2.8,6.0",
        "--iterations", "101", "--burn-in", "100", "--seed", "2", "--out", &path(&one),
    ]);
    let text = std::fs::read_to_string(one.join("chain_0.csv")).unwrap();
    assert_eq!(text.lines().count(), 2); // header + one draw
    assert!(one.join("chain_0.meta.json").exists());
    assert!(one.join("fit_report_0.json").exists());
    assert!(one.join("fit_config.json").exists());

    // Same seed, fresh output directory: byte-identical chain CSV.
    let a = workdir("fit-a");
    let b = workdir("fit-b");
    for out in [&a, &b] {
        run_ok(&[
            "fit", "--data", &data, "--covariates", "x1,x2", "--j", "2", "--nu", "2.8,6.0",
            "--iterations", "400", "--burn-in", "100", "--seed", "11", "--out", &path(out),
        ]);
    }
    assert_eq!(
        std::fs::read(a.join("chain_0.csv")).unwrap(),
        std::fs::read(b.join("chain_0.csv")).unwrap()
    );
}

#[test]
fn fit_multiple_chains_and_grid_nu() {
    let dir = workdir("fit-mc");
    run_ok(&["simulate", "--study", "study1", "--n", "200", "--seed", "6", "--out", &path(&dir)]);
    let out = workdir("fit-mc-out");
    // nu designed internally from --k/--nu-min/--nu-max.
    let stdout = run_ok(&[
        "fit", "--data", &path(&dir.join("dataset.csv")), "--covariates", "x1,x2",
        "--j", "2", "--k", "3", "--nu-min", "2.8", "--nu-max", "14.4",
        "--iterations", "300", "--burn-in", "100", "--seed", "4", "--chains", "2",
        "--density-out", &path(&out.join("density.csv")), "--out", &path(&out),
    ]);
    assert!(stdout.contains("chain 0:"));
    assert!(stdout.contains("chain 1:"));
    assert!(out.join("chain_1.csv").exists());
    let density = std::fs::read_to_string(out.join("density.csv")).unwrap();
    assert!(density.starts_with("x,fhat"));
    assert_eq!(density.lines().count(), 513);

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("chain_0.meta.json")).unwrap())
            .unwrap();
    let nu: Vec<f64> = meta["spec"]["nu"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(nu.len(), 3);
    assert_eq!(nu[0], 2.8);
    assert_eq!(nu[2], 14.4);
}

#[test]
fn predict_writes_expected_columns_and_metrics() {
    let dir = workdir("pred");
    run_ok(&["simulate", "--study", "study1", "--n", "400", "--seed", "8", "--out", &path(&dir)]);
    let data = path(&dir.join("dataset.csv"));
    let fitdir = workdir("pred-fit");
    run_ok(&[
        "fit", "--data", &data, "--covariates", "x1,x2", "--j", "2", "--nu", "2.8,6.0",
        "--iterations", "600", "--burn-in", "200", "--seed", "13", "--out", &path(&fitdir),
    ]);
    let preddir = workdir("pred-out");
    let stdout = run_ok(&[
        "predict", "--chain", &path(&fitdir.join("chain_0.csv")), "--data", &data,
        "--response", "y", "--covariates", "x1,x2", "--seed", "21", "--out", &path(&preddir),
    ]);
    assert!(stdout.contains("rmse"));
    let text = std::fs::read_to_string(preddir.join("predictions.csv")).unwrap();
    assert!(text.starts_with("id,y_true,y_hat,hpd99_lo,hpd99_hi"));
    assert_eq!(text.lines().count(), 401);
    assert!(preddir.join("prediction_metrics.json").exists());
}

#[test]
fn predict_missing_chain_fails() {
    let dir = workdir("pred-miss");
    run_ok(&["simulate", "--study", "study1", "--n", "50", "--seed", "8", "--out", &path(&dir)]);
    let out = run(&[
        "predict", "--chain", "/nonexistent/chain.csv", "--data",
        &path(&dir.join("dataset.csv")), "--response", "y", "--covariates", "x1,x2",
    ]);
    assert!(!out.status.success());
}

#[test]
fn compare_sorts_by_dic_and_rejects_foreign_chains() {
    let dir = workdir("cmp");
    run_ok(&["simulate", "--study", "study1", "--n", "300", "--seed", "14", "--out", &path(&dir)]);
    let data = path(&dir.join("dataset.csv"));
    let f1 = workdir("cmp-f1");
    let f2 = workdir("cmp-f2");
    run_ok(&[
        "fit", "--data", &data, "--covariates", "x1,x2", "--j", "2", "--nu", "2.8,6.0",
        "--iterations", "800", "--burn-in", "200", "--seed", "15", "--out", &path(&f1),
    ]);
    run_ok(&[
        "fit", "--data", &data, "--covariates", "x1,x2", "--j", "1", "--nu", "2.8,6.0",
        "--iterations", "800", "--burn-in", "200", "--seed", "15", "--out", &path(&f2),
    ]);
    let cmpdir = workdir("cmp-out");
    let chains = format!("{},{}", path(&f1.join("chain_0.csv")), path(&f2.join("chain_0.csv")));
    let stdout = run_ok(&[
        "compare", "--chains", &chains, "--data", &data, "--covariates", "x1,x2",
        "--out", &path(&cmpdir),
    ]);
    let table: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(cmpdir.join("dic_table.json")).unwrap())
            .unwrap();
    assert_eq!(table.len(), 2);
    assert!(table[0]["dic_v"].as_f64().unwrap() <= table[1]["dic_v"].as_f64().unwrap());
    assert!(stdout.contains("DIC"));

    // A chain fitted on different data is rejected.
    let other = workdir("cmp-other");
    run_ok(&["simulate", "--study", "study1", "--n", "300", "--seed", "99", "--out", &path(&other)]);
    let f3 = workdir("cmp-f3");
    run_ok(&[
        "fit", "--data", &path(&other.join("dataset.csv")), "--covariates", "x1,x2",
        "--j", "1", "--nu", "2.8,6.0", "--iterations", "400", "--burn-in", "100",
        "--seed", "1", "--out", &path(&f3),
    ]);
    let chains_bad = format!("{},{}", path(&f1.join("chain_0.csv")), path(&f3.join("chain_0.csv")));
    let out = run(&[
        "compare", "--chains", &chains_bad, "--data", &data, "--covariates", "x1,x2",
        "--out", &path(&cmpdir),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different dataset"));
}

#[test]
fn fit_ordinary_t_with_sampled_nu_round_trips() {
    let dir = workdir("ordt");
    run_ok(&["simulate", "--study", "study1", "--n", "250", "--seed", "17", "--out", &path(&dir)]);
    let out = workdir("ordt-out");
    let stdout = run_ok(&[
        "fit", "--data", &path(&dir.join("dataset.csv")), "--covariates", "x1,x2",
        "--j", "2", "--nu", "3.0,8.0", "--variant", "ordinary-t", "--sample-nu",
        "--iterations", "400", "--burn-in", "100", "--seed", "19", "--out", &path(&out),
    ]);
    assert!(stdout.contains("nu accept"));
    let header = std::fs::read_to_string(out.join("chain_0.csv"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(header.contains("nu.1") && header.contains("nu.2"));

    // Prediction consumes the sampled-nu chain.
    let preddir = workdir("ordt-pred");
    run_ok(&[
        "predict", "--chain", &path(&out.join("chain_0.csv")), "--data",
        &path(&dir.join("dataset.csv")), "--response", "y", "--covariates", "x1,x2",
        "--out", &path(&preddir),
    ]);
    assert!(preddir.join("predictions.csv").exists());
}
