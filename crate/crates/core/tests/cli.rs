mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use underreport::cli::record::RunRecord;
use underreport::cli::table::read_table;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_underreport"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let out = path(dir, name);
    let mut args = vec!["simulate", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn record(p: &Path) -> RunRecord {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn estimand(r: &RunRecord, name: &str) -> f64 {
    r.estimands.iter().find(|v| v.name == name).unwrap().value
}

fn sweep_rows(p: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(p).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["tau", "rd", "ci_lo", "ci_hi", "converged"]
    );
    reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = simulate(&dir, "a.csv", &["--n", "300", "--seed", "5", "--tau2", "0.3"]);
    let b = simulate(&dir, "b.csv", &["--n", "300", "--seed", "5", "--tau2", "0.3"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(path(&dir, "a.truth.json")).unwrap(),
        std::fs::read(path(&dir, "b.truth.json")).unwrap()
    );
    let header = std::fs::read_to_string(&a).unwrap();
    assert!(header.starts_with("y,a_obs,a_obs2,x1,x2,x3,x4,x5\n"));
}

#[test]
fn zero_rate_truth_column_equals_report() {
    let dir = TempDir::new().unwrap();
    let p = simulate(&dir, "d.csv", &["--n", "500", "--tau", "0", "--emit-truth-column"]);
    let table = read_table(&p, None).unwrap();
    assert_eq!(table.a_true.unwrap(), table.data.a_obs());
    assert_eq!(table.covariate_names.len(), 5);
}

#[test]
fn simulated_masking_rate_counting_oracle() {
    let dir = TempDir::new().unwrap();
    let p = simulate(
        &dir,
        "big.csv",
        &["--n", "100000", "--tau", "0.25", "--seed", "3", "--emit-truth-column"],
    );
    let table = read_table(&p, None).unwrap();
    let a_true = table.a_true.unwrap();
    let exposed = a_true.iter().filter(|&&a| a).count() as f64;
    let masked = a_true
        .iter()
        .zip(table.data.a_obs())
        .filter(|(&a, &o)| a && !o)
        .count() as f64;
    let rate = masked / exposed;
    let se = (0.25 * 0.75 / exposed).sqrt();
    assert!((rate - 0.25).abs() < 3.0 * se, "rate {rate}");

    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path(&dir, "big.truth.json")).unwrap())
            .unwrap();
    assert!(truth["true_rd"].as_f64().unwrap() > 0.0);
}

#[test]
fn known_zero_rate_is_logistic_regression() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--n", "2000", "--d", "2", "--seed", "8"]);
    let out = path(&dir, "fit.json");
    ok(&["fit", s(&data), "--mode", "known-tau", "--tau", "0", "--out", s(&out)]);
    let r = record(&out);
    let fit = r.fit.as_ref().unwrap();
    assert!(fit.converged);

    let table = read_table(&data, None).unwrap();
    let d = &table.data;
    let design: Vec<Vec<f64>> = (0..d.n())
        .map(|i| {
            let mut row = d.row(i).to_vec();
            row.push(if d.a_obs()[i] { 1.0 } else { 0.0 });
            row
        })
        .collect();
    let beta = common::newton_logistic(&design, d.y());
    let th = &fit.params.outcome;
    let fitted: Vec<f64> = std::iter::once(th.intercept)
        .chain(th.weights.iter().copied())
        .chain(std::iter::once(th.exposure_coef))
        .collect();
    for (a, b) in fitted.iter().zip(&beta) {
        assert!((a - b).abs() < 1e-4, "{fitted:?} vs {beta:?}");
    }
    let or = estimand(&r, "odds_ratio");
    assert!((or - th.exposure_coef.exp()).abs() < 1e-12);
}

#[test]
fn dual_mode_without_second_report_fails() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--n", "200"]);
    let out = run(&["fit", s(&data), "--mode", "dual"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("a_obs2"), "{err}");
    assert!(err.contains("--mode dual"), "{err}");
}

#[test]
fn known_tau_requires_rate() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--n", "200"]);
    assert_eq!(run(&["fit", s(&data), "--mode", "known-tau"]).status.code(), Some(1));
    let bad = run(&["fit", s(&data), "--mode", "known-tau", "--tau", "1"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn single_report_fit_recovers_rate() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--n", "20000", "--tau", "0.25", "--seed", "2"]);
    let out = path(&dir, "fit.json");
    ok(&["fit", s(&data), "--mode", "single", "--out", s(&out)]);
    let r = record(&out);
    let fit = r.fit.unwrap();
    let tau = fit.parameters.iter().find(|v| v.name == "tau").unwrap().value;
    assert!((tau - 0.25).abs() < 0.05, "tau {tau}");
    assert_eq!(r.covariates, ["x1", "x2", "x3", "x4", "x5"]);
}

#[test]
fn default_sweep_grid_has_fourteen_rows() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--n", "600"]);
    let out = path(&dir, "band.csv");
    ok(&["sweep", s(&data), "--out", s(&out)]);
    let rows = sweep_rows(&out);
    assert_eq!(rows.len(), 14);
    let taus: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(taus[0], 0.0);
    assert_eq!(taus[13], 0.65);
    assert!(taus.windows(2).all(|w| w[0] < w[1]));
    assert!(rows.iter().all(|r| r[2].is_empty() && r[4] == "true"));
}

#[test]
fn sweep_points_agree_with_fit() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--n", "1500", "--seed", "4"]);
    for tau in ["0.25", "0"] {
        let band = path(&dir, "band.csv");
        ok(&["sweep", s(&data), "--tau-grid", tau, "--seed", "6", "--out", s(&band)]);
        let rd: f64 = sweep_rows(&band)[0][1].parse().unwrap();
        let rec = path(&dir, "fit.json");
        ok(&[
            "fit", s(&data), "--mode", "known-tau", "--tau", tau, "--seed", "6", "--out", s(&rec),
        ]);
        assert_eq!(rd, estimand(&record(&rec), "risk_difference"), "tau {tau}");
    }
}

#[test]
fn sweep_rejects_bad_grid() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--n", "100"]);
    for grid in ["0.3,0.2", "0:1:3", "0:0.5:0", "x"] {
        let out = run(&["sweep", s(&data), "--tau-grid", grid]);
        assert_eq!(out.status.code(), Some(1), "{grid}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("--tau-grid"));
    }
}

#[test]
fn experiment_smoke() {
    let dir = TempDir::new().unwrap();
    let prefix = path(&dir, "exp");
    ok(&[
        "experiment", "--axis", "tau", "--grid", "0,0.4", "--replicates", "2", "--n", "300",
        "--restarts", "2", "--out-prefix", s(&prefix),
    ]);
    let csv = std::fs::read_to_string(path(&dir, "exp.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "grid_value,mse_adjusted,mse_unadjusted,n_failed");
    assert_eq!(lines.len(), 3);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path(&dir, "exp.json")).unwrap()).unwrap();
    assert_eq!(json["replicates"], 2);
}

#[test]
fn mutual_information_command() {
    let dir = TempDir::new().unwrap();
    let flat = simulate(&dir, "flat.csv", &["--n", "10000", "--phi-scale", "0"]);
    let first = ok(&["mi", s(&flat)]);
    let value: f64 = String::from_utf8_lossy(&first.stdout).trim().parse().unwrap();
    assert!((0.0..0.01).contains(&value), "{value}");
    assert_eq!(first.stdout, ok(&["mi", s(&flat)]).stdout);

    let out = run(&["mi", s(&flat), "--target", "a_obs2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("a_obs2"));

    let rec = path(&dir, "mi.json");
    ok(&["mi", s(&flat), "--covariates", "x1,x3", "--record", s(&rec)]);
    let r = record(&rec);
    assert_eq!(r.covariates, ["x1", "x3"]);
    assert!(r.mutual_information.unwrap() >= 0.0);
}

#[test]
fn malformed_tables_name_the_row() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("y,a_obs,x1\n1,0,0.5\n2,0,0.1\n", "row 3"),
        ("y,a_obs,x1\n1,0,0.5\n0,1,abc\n", "x1"),
        ("y,a_obs,x1\n1,0,0.5\n0,1\n", "row 3"),
        ("y,x1\n1,0.5\n", "a_obs"),
        ("y,a_obs,x1,x1\n1,0,0.5,0.5\n", "twice"),
        ("y,a_obs,x1\n1,0,NaN\n", "row 2"),
    ];
    for (i, (text, needle)) in cases.iter().enumerate() {
        let p = path(&dir, &format!("bad{i}.csv"));
        std::fs::write(&p, text).unwrap();
        let out = run(&["fit", s(&p), "--mode", "single"]);
        assert_eq!(out.status.code(), Some(1), "case {i}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "case {i}: {err}");
    }
}

#[test]
fn record_argv_replays_identically() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--n", "800", "--seed", "9"]);
    let out = path(&dir, "fit.json");
    ok(&[
        "fit", s(&data), "--mode", "single", "--seed", "13", "--bootstrap", "20", "--ci", "0.9",
        "--standardize", "--out", s(&out),
    ]);
    let first = std::fs::read(&out).unwrap();
    let r = record(&out);
    assert_eq!(r.command, "fit");
    assert_eq!(r.seed, 13);
    assert!(r.standardization.is_some());
    assert_eq!(r.bootstrap.as_ref().unwrap().replicates, 20);
    std::fs::remove_file(&out).unwrap();
    let argv: Vec<&str> = r.argv.iter().map(String::as_str).collect();
    ok(&argv);
    assert_eq!(first, std::fs::read(&out).unwrap());
}

#[test]
fn record_floats_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--n", "500"]);
    let out = path(&dir, "fit.json");
    ok(&["fit", s(&data), "--mode", "known-tau", "--tau", "0.2", "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let r: RunRecord = serde_json::from_str(&text).unwrap();
    let ll = r.fit.as_ref().unwrap().log_likelihood;
    assert!(text.contains(&format!("{ll:.16e}")));
    let reparsed: RunRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(r, reparsed);
}

#[test]
fn iteration_cap_exits_two_with_record() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "d.csv", &["--n", "500"]);
    let out = path(&dir, "fit.json");
    let res = run(&[
        "fit", s(&data), "--mode", "single", "--max-iterations", "1", "--out", s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!record(&out).fit.unwrap().converged);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
}
