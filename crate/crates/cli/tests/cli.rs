use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn linimm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linimm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = linimm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_pendulum_config(dir: &Path) -> String {
    let cfg = r#"{
        "seed": 3,
        "data": {"pendulum": {"n_orbits": 6, "samples_per_orbit": 8, "n_test": 2, "test_periods": 1.0}},
        "lm": {"max_iters": 0}
    }"#;
    let path = dir.join("small.json");
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_is_deterministic_in_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    ok(&["gen", "--experiment", "pendulum", "--seed", "7", "--out", a.to_str().unwrap()]);
    ok(&["gen", "--experiment", "pendulum", "--seed", "7", "--out", b.to_str().unwrap()]);
    for f in ["x.csv", "y.csv", "period.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    ok(&["gen", "--experiment", "pendulum", "--seed", "8", "--out", c.to_str().unwrap()]);
    let m = read_json(&c.join("manifest.json"));
    assert_eq!(m["config"]["seed"], 8);
    let range = &m["config"]["data"]["pendulum"]["energy_range"];
    let (lo, hi) = (range[0].as_f64().unwrap(), range[1].as_f64().unwrap());
    assert!(-1.0 < lo && lo < hi && hi < 1.0);
}

#[test]
fn verify_analytic_reports_all_cases() {
    let out = ok(&["verify-analytic"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let cases: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["case"].as_str().unwrap()).collect();
    assert_eq!(cases, ["harmonic_family", "limit_cycle", "coexisting"]);
    assert!(v.as_array().unwrap().iter().all(|r| r["pass"] == true && r["max_error"].as_f64().unwrap() < 1e-6));

    let one = ok(&["verify-analytic", "--case", "limit_cycle"]);
    let v: Value = serde_json::from_slice(&one.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);
}

#[test]
fn verify_analytic_exit_codes() {
    // An unreachable tolerance fails the check without erroring.
    assert_eq!(linimm(&["verify-analytic", "--case", "limit_cycle", "--tolerance", "1e-30"]).status.code(), Some(1));
    assert_eq!(linimm(&["verify-analytic", "--case", "nope"]).status.code(), Some(2));
}

#[test]
fn floquet_vdp_matches_known_constants() {
    let out = ok(&["floquet"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["period"].as_f64().unwrap() - 6.66).abs() < 0.01);
    assert!((v["decay_rate"].as_f64().unwrap() - 1.06).abs() < 0.02);
    assert_eq!(v["multipliers"].as_array().unwrap().len(), 2);
}

#[test]
fn floquet_forced_attractor_is_a_focus() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("fl.json");
    ok(&["floquet", "--system", "duffing_fd", "--point", "1.0,0.4", "--out", path.to_str().unwrap()]);
    let v = read_json(&path);
    let moduli = v["nontrivial_moduli"].as_array().unwrap();
    assert_eq!(moduli.len(), 2);
    assert!(moduli.iter().all(|m| m.as_f64().unwrap() < 1.0));
    assert!(v["point"][0].as_f64().unwrap() > 0.5);
}

#[test]
fn unknown_system_is_an_error() {
    let out = linimm(&["floquet", "--system", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn gen_requires_an_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = linimm(&["gen", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_reconstruct_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_pendulum_config(tmp.path());
    let data = tmp.path().join("data");
    let model = tmp.path().join("model");
    ok(&["gen", "--config", &cfg, "--out", data.to_str().unwrap()]);
    ok(&["train", "--data", data.to_str().unwrap(), "--out", model.to_str().unwrap()]);
    for f in ["phi.json", "phi_inv.json", "period.json", "meta.json", "config.json", "train_report.json", "phi_log.csv"]
    {
        assert!(model.join(f).exists(), "missing {f}");
    }
    let report = read_json(&model.join("train_report.json"));
    assert_eq!(report["phi"]["lm"]["iterations"], 0);
    assert_eq!(report["phi"]["lm"]["terminal_reason"], "MaxIters");
    let log = fs::read_to_string(model.join("phi_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("iter,loss,mu,accepted"));

    let rec = tmp.path().join("rec.csv");
    ok(&[
        "reconstruct",
        "--model",
        model.to_str().unwrap(),
        "--x0",
        "0.5,0.0",
        "--horizon",
        "2",
        "--dt",
        "0.5",
        "--out",
        rec.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&rec).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x1,x2");
    assert_eq!(lines.len(), 6);
    assert!(tmp.path().join("rec.linear.csv").exists());

    let ev = tmp.path().join("eval");
    ok(&["eval", "--model", model.to_str().unwrap(), "--out", ev.to_str().unwrap()]);
    let summary = read_json(&ev.join("eval_report.json"));
    assert_eq!(summary["case_max_errors"].as_array().unwrap().len(), 2);
    assert!(ev.join("case00_truth.csv").exists() && ev.join("case01_error.csv").exists());

    let eig = tmp.path().join("eig.csv");
    ok(&["eigenfunctions", "--model", model.to_str().unwrap(), "--n", "3", "--out", eig.to_str().unwrap()]);
    let text = fs::read_to_string(&eig).unwrap();
    assert!(text.lines().next().unwrap().starts_with("x1,x2,mag1,phase1,mag2,phase2"));
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn reconstruct_rejects_wrong_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_pendulum_config(tmp.path());
    let model = tmp.path().join("model");
    ok(&["train", "--config", &cfg, "--out", model.to_str().unwrap()]);
    let out = linimm(&[
        "reconstruct",
        "--model",
        model.to_str().unwrap(),
        "--x0",
        "0.5,0.0,1.0",
        "--horizon",
        "1",
        "--out",
        tmp.path().join("r.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forced_gen_records_region_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("fd.json");
    fs::write(
        &cfg,
        r#"{"data": {"duffing_fd": {"spacing": 0.5, "max_extension_ics": 4, "samples_per_period": 3, "label_periods": 20}}}"#,
    )
    .unwrap();
    let out = tmp.path().join("fd");
    ok(&["gen", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let m = read_json(&out.join("manifest.json"));
    let stats = &m["stats"];
    assert_eq!(stats["grid_points"].as_f64().unwrap(), 20.0);
    assert!(stats["extension_points"].as_f64().unwrap() > 0.0);
    assert_eq!(stats["initial_states"].as_f64().unwrap(), 24.0);
    assert_eq!(m["rows"], 24 * 4);
}

#[test]
fn region_writes_points_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("region");
    ok(&["region", "--spacing", "0.5", "--out", out.to_str().unwrap()]);
    let s = read_json(&out.join("region.json"));
    assert_eq!(s["grid_points"], 20);
    let csv = fs::read_to_string(out.join("region.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("kind,x1,x2"));
    let n = s["grid_points"].as_u64().unwrap() + s["extension_points"].as_u64().unwrap();
    assert_eq!(csv.lines().count() as u64, n + 1);
}
