use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matweight")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn constant_weight_has_characteristic_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["characteristic", "--family", "constant", "--value", "3.7", "--grid", "32", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert!((r["estimate"]["characteristic"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(r["estimate"]["verdict"], "finite");
    assert!(out.join("traces/levels.csv").exists());
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = vec![];
    for k in 0..2 {
        let out = dir.path().join(format!("r{k}"));
        let o = run(&["balance", "--family", "example-7-balance-failure", "--alpha", "0.5", "--grid", "64", "--seed", "4", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        texts.push(std::fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn expectation_mismatch_exits_two() {
    let args = ["characteristic", "--family", "remark-5.2", "--gamma", "0.75", "--grid", "64"];
    let ok = run(&[&args[..], &["--expect", "diverging"]].concat());
    assert_eq!(code(&ok), 0);
    let bad = run(&[&args[..], &["--expect", "finite"]].concat());
    assert_eq!(code(&bad), 2);
}

#[test]
fn config_errors_exit_three() {
    let o = run(&["characteristic", "--family", "no-such-family"]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("example-5.1") && err.contains("ball-map"), "{err}");

    assert_eq!(code(&run(&["characteristic", "--family", "constant", "--value", "1", "--grid", "2"])), 3);
    assert_eq!(code(&run(&["characteristic", "--family", "remark-5.2", "--gamma", "-1"])), 3);
    assert_eq!(code(&run(&["solve", "--family", "constant", "--value", "1", "--grid", "8", "--boundary", "x +* y"])), 3);
    assert_eq!(code(&run(&["verify-example", "unknown"])), 3);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"family": "constant", "gird": 16}"#).unwrap();
    let o = run(&["characteristic", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gird"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"family": {"family": "constant", "value": 2.0}, "grid": 16, "kind": "a1"}"#).unwrap();
    let out = dir.path().join("run");
    let o = run(&["characteristic", "--config", cfg.to_str().unwrap(), "--grid", "32", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let r = report(&out);
    assert_eq!(r["grid"][0], 32);
    assert_eq!(r["kind"], "a1");
}

#[test]
fn solve_reproduces_harmonic_boundary_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["solve", "--family", "constant", "--value", "1", "--grid", "32", "--boundary", "x^2 - y^2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("rasters/u.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,y,u"));
    let worst = lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
            (v[2] - (v[0] * v[0] - v[1] * v[1])).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn verify_small_examples() {
    for name in ["plap-harmonic", "example-7-balance-failure"] {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&["verify-example", name, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stdout));
        assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.starts_with("PASS")));
        assert_eq!(report(dir.path())["pass"], true);
    }
}

#[test]
fn mfd_reports_distortion_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["mfd", "--family", "scaling", "--c", "2", "--n", "2", "--grid", "32", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("rasters/distortion.csv")).unwrap();
    assert!(csv.starts_with("x,y,J,K_O,K_I,continuity"));
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!((row[2] - 4.0).abs() < 1e-12 && (row[3] - 1.0).abs() < 1e-12);
}
