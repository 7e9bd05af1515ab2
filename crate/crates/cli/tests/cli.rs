use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critpoint")).args(args).output().expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn fractions_in_three_dimensions() {
    let v = json(&["fractions", "--N", "3", "--cross-check"]);
    assert_eq!(v["schema"], 1);
    let f: Vec<f64> = v["results"].as_array().unwrap().iter().map(|r| r["fraction"].as_f64().unwrap()).collect();
    let expect = [0.1233, 0.3767, 0.3767, 0.1233];
    for (a, b) in f.iter().zip(expect) {
        assert!((a - b).abs() < 1e-4, "{f:?}");
    }
    assert!(v["summary"]["cross_check"]["max_abs_gap"].as_f64().unwrap() < 1e-10);
    assert!(v["results"].as_array().unwrap().iter().all(|r| r["method"] == "quadrature"));
}

#[test]
fn density_csv_has_exact_zero_node() {
    let out = run(&["goe-density", "--N", "3", "--k", "2", "--grid", "-4:4:0.1", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("l,density,method"));
    let zero = lines.find(|l| l.starts_with("0.0,")).expect("row at l = 0");
    let q: f64 = zero.split(',').nth(1).unwrap().parse().unwrap();
    assert!((q - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-9, "{q}");
    assert_eq!(text.lines().count(), 82);
}

#[test]
fn identical_arguments_give_identical_bytes() {
    let args =
        ["corr-mc", "--N", "2", "--rho", "0.05:0.2:3:log", "--samples", "20000", "--seed", "11", "--cross-check"];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let threads = run(&[&args[..], &["--threads", "1"]].concat());
    assert_eq!(a.stdout, threads.stdout);
}

#[test]
fn counts_match_closed_form_in_two_dimensions() {
    let v = json(&["counts", "--N", "2", "--model", "gaussian", "--cross-check"]);
    assert!(v["summary"]["cross_check"]["relative_gap"].as_f64().unwrap() < 1e-10);
    assert_eq!(v["summary"]["cross_check"]["method"], "closed-form");
}

#[test]
fn goe_samples_pass_ks_against_densities() {
    let v = json(&["goe-sample", "--N", "3", "--samples", "20000", "--seed", "5", "--cross-check"]);
    for r in v["results"].as_array().unwrap() {
        assert!(r["ks_distance"].as_f64().unwrap() < r["ks_critical_1pct"].as_f64().unwrap());
    }
}

#[test]
fn simulate_writes_a_readable_snapshot() {
    let dir = std::env::temp_dir().join(format!("critpoint-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let snap = dir.join("field.cplb");
    let report = dir.join("report.json");
    let out = run(&[
        "simulate",
        "--N",
        "2",
        "--side",
        "64",
        "--spacing",
        "0.15",
        "--realizations",
        "2",
        "--seed",
        "3",
        "--snapshot",
        snap.to_str().unwrap(),
        "-o",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let grid = critpoint::field::read_snapshot(std::fs::File::open(&snap).unwrap()).unwrap();
    assert_eq!((grid.dim, grid.side, grid.values.len()), (2, 64, 64 * 64));
    let v: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 2);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["fractions"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    // preconditions
    assert_eq!(run(&["fractions", "--N", "0"]).status.code(), Some(2));
    assert_eq!(run(&["counts", "--N", "2", "--model", "nonsense"]).status.code(), Some(2));
    assert_eq!(run(&["goe-density", "--N", "3", "--grid", "1:0:0.1"]).status.code(), Some(2));
    // a separation this small leaves the conditioning denominators at rounding level
    let singular = run(&["corr-mc", "--N", "2", "--rho", "1e-9", "--samples", "10000"]);
    assert_eq!(singular.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&singular.stderr).contains("singular"));
}
