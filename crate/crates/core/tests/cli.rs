use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gk-utm"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn solve_is_reproducible_and_records_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("laser_flash_newton.toml");
    let mut csvs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let o = run(&["solve", s.to_str().unwrap(), "--t-end", "0.2", "--t-step", "0.05", "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert_eq!(text.lines().next(), Some("x,t,e,q"));
    assert_eq!(text.lines().count(), 1 + 5);

    let manifest = std::fs::read_to_string(dir.path().join("a.csv.manifest.toml")).unwrap();
    let m: toml::Value = toml::from_str(&manifest).unwrap();
    assert_eq!(m["method"].as_str(), Some("utm"));
    assert_eq!(m["overrides"]["t-end"].as_str(), Some("0.2"));
}

#[test]
fn bad_grid_exits_with_config_code() {
    let s = scenario("laser_flash_newton.toml");
    let o = run(&["solve", s.to_str().unwrap(), "--t-step", "0.03", "-o", "-"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["solve", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fastpath_with_initial_data_is_a_precondition_error() {
    let s = scenario("cosine_insulated.toml");
    let o = run(&["solve", s.to_str().unwrap(), "--method", "fastpath", "-o", "-"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn contour_dump_honors_radius_override() {
    let s = scenario("laser_flash_newton.toml");
    let o = run(&["contour", s.to_str().unwrap(), "--r0", "0.37", "--n-nodes", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("r0 0.37"), "{err}");
    let body = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<f64>> = body
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(!rows.is_empty());
    let inner = rows.iter().map(|r| r[0].hypot(r[1])).fold(f64::INFINITY, f64::min);
    assert!(inner >= 0.37 * (1.0 - 1e-9), "closest node {inner}");
}

#[test]
fn compare_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let a = scenario("laser_flash_insulated.toml");
    let report = dir.path().join("r.toml");
    let o = run(&[
        "compare",
        a.to_str().unwrap(),
        a.to_str().unwrap(),
        "--method-b",
        "series",
        "--t-end",
        "0.2",
        "--t-step",
        "0.1",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: toml::Value = toml::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r["e"]["max_abs"].as_float().unwrap() < 1e-8);
}
