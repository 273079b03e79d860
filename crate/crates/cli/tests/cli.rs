use std::path::Path;
use std::process::{Command, Output};

use kan_verify::bench::write_benchmark_models;
use kan_verify::milp::read_lp;
use kan_verify::solver::{solve, SolveConfig};
use serde_json::Value;

fn kan_verify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kan-verify"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn models() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_benchmark_models(dir.path()).unwrap();
    dir
}

fn model(dir: &Path, name: &str) -> String {
    dir.join(format!("{name}.kan.json")).to_str().unwrap().to_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn verify_reports_a_range_containing_the_samples() {
    let dir = models();
    let out = kan_verify(&["verify", "--model", &model(dir.path(), "xy"), "--box", "[[-0.2,0.3],[0.1,0.4]]"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    let r = &report["ranges"][0];
    let emp = &report["empirical"][0];
    assert!(r["lower"].as_f64().unwrap() <= emp[0].as_f64().unwrap());
    assert!(emp[1].as_f64().unwrap() <= r["upper"].as_f64().unwrap());
}

#[test]
fn budget_below_the_floor_exits_with_3() {
    let dir = models();
    let out = kan_verify(&["allocate", "--model", &model(dir.path(), "exp"), "--delta", "1e-6"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("minimum achievable"));
}

#[test]
fn node_limit_exits_with_2() {
    let dir = models();
    let out = kan_verify(&[
        "verify", "--model", &model(dir.path(), "exp4"), "--radius", "0.5", "--mip-gap", "0", "--node-limit", "1",
        "--samples", "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn emitted_lp_round_trips_through_solution_ingestion() {
    let dir = models();
    let lp = dir.path().join("out").join("xy.lp");
    let xy = model(dir.path(), "xy");
    let out = kan_verify(&["encode", "--model", &xy, "--radius", "0.25", "--emit-lp", lp.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out").join("xy.min.lp").exists());

    let model_lp = read_lp(&std::fs::read_to_string(&lp).unwrap()).unwrap();
    let cfg = SolveConfig { mip_gap: 0.0, ..SolveConfig::default() };
    let res = solve(&model_lp, &cfg).unwrap();
    let x = res.assignment.unwrap();
    let sol: String = model_lp
        .variables
        .iter()
        .zip(&x)
        .map(|(v, val)| format!("{} {val:?}\n", v.name))
        .collect();
    let sol_path = dir.path().join("xy.sol");
    std::fs::write(&sol_path, sol).unwrap();

    let out = kan_verify(&[
        "encode", "--model", &xy, "--radius", "0.25", "--ingest-solution", sol_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = &json(&out)["solution"];
    assert!((s["objective"].as_f64().unwrap() - res.incumbent.unwrap()).abs() < 1e-9);
    assert!(s["max_violation"].as_f64().unwrap() < 1e-9);
    assert_eq!(s["input"].as_array().unwrap().len(), 2);
}

#[test]
fn sensitivity_sweep_flags_one_feature() {
    let dir = models();
    let out = kan_verify(&["sensitivity", "--model", &model(dir.path(), "exp"), "--radius", "0.1", "--samples", "500"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let results = json(&out);
    let rows = results.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().filter(|r| r["most_sensitive"] == Value::Bool(true)).count(), 1);
}

#[test]
fn bad_box_is_a_usage_error() {
    let dir = models();
    let out = kan_verify(&["verify", "--model", &model(dir.path(), "xy"), "--box", "[[1,0],[0,1]]"]);
    assert_eq!(out.status.code(), Some(1));
    let out = kan_verify(&["verify", "--model", &model(dir.path(), "xy")]);
    assert_eq!(out.status.code(), Some(1));
}
