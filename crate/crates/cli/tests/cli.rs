use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn weakkam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weakkam"))
        .current_dir(dir)
        .env("WEAKKAM_CACHE", dir.join("cache"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_alpha(dir: &Path) -> f64 {
    fs::read_to_string(dir.join("alpha.txt")).unwrap().trim().parse().unwrap()
}

#[test]
fn solve_pendulum_and_free() {
    let tmp = TempDir::new().unwrap();
    ok(&weakkam(tmp.path(), &["solve", "--system", "pendulum", "--c", "0", "-o", "p"]));
    assert!(read_alpha(&tmp.path().join("p")).abs() < 1e-3);
    ok(&weakkam(tmp.path(), &["solve", "--system", "free", "--c", "1", "-o", "f"]));
    assert!((read_alpha(&tmp.path().join("f")) - 0.5).abs() < 1e-3);
    let manifest = fs::read_to_string(tmp.path().join("f/solve.manifest.json")).unwrap();
    assert!(manifest.contains("config_hash") && manifest.contains("u.grid"));
}

#[test]
fn rerun_hits_cache_with_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let args = ["solve", "--system", "pendulum", "--c", "-0.5", "--grid", "128", "-o", "out"];
    ok(&weakkam(tmp.path(), &args));
    let first: Vec<Vec<u8>> =
        ["alpha.txt", "u.grid", "u.json", "solve.manifest.json"].iter().map(|f| fs::read(tmp.path().join("out").join(f)).unwrap()).collect();
    let again = weakkam(tmp.path(), &args);
    ok(&again);
    assert!(String::from_utf8_lossy(&again.stderr).contains("cache hit"));
    for (f, bytes) in ["alpha.txt", "u.grid", "u.json", "solve.manifest.json"].iter().zip(&first) {
        assert_eq!(&fs::read(tmp.path().join("out").join(f)).unwrap(), bytes, "{f} changed");
    }
}

#[test]
fn crit_lists_both_rest_points() {
    let tmp = TempDir::new().unwrap();
    ok(&weakkam(tmp.path(), &["crit", "--system", "pendulum", "--c", "0", "-o", "out"]));
    let csv = fs::read_to_string(tmp.path().join("out/crit.csv")).unwrap();
    let xs: Vec<f64> = csv.lines().skip(1).map(|l| l.parse().unwrap()).collect();
    let cell = 1.0 / 512.0;
    assert!(xs.iter().any(|x| x.min(1.0 - x) <= cell), "{xs:?}");
    assert!(xs.iter().any(|x| (x - 0.5).abs() <= cell), "{xs:?}");
    assert!(!csv.contains('\r'));
}

#[test]
fn conley_free_is_empty() {
    let tmp = TempDir::new().unwrap();
    ok(&weakkam(tmp.path(), &["conley", "--system", "free", "--c", "1", "--grid", "128", "-o", "out"]));
    let csv = fs::read_to_string(tmp.path().join("out/recurrent.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "{csv}");
}

#[test]
fn flow_writes_trajectory_and_omega() {
    let tmp = TempDir::new().unwrap();
    ok(&weakkam(tmp.path(), &["flow", "--system", "pendulum", "--grid", "256", "--x0", "0.2", "--horizon", "3", "-o", "out"]));
    let lines = fs::read_to_string(tmp.path().join("out/trajectory.jsonl")).unwrap();
    assert!(lines.lines().count() > 100);
    let omega = fs::read_to_string(tmp.path().join("out/omega.json")).unwrap();
    assert!(omega.contains("stationary"), "{omega}");
}

#[test]
fn no_compute_reports_missing_dependency() {
    let tmp = TempDir::new().unwrap();
    let out = weakkam(tmp.path(), &["sing", "--system", "pendulum", "--no-compute", "-o", "out"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing prerequisite"));
}

#[test]
fn bad_config_exits_four() {
    let tmp = TempDir::new().unwrap();
    for args in [
        &["solve", "--system", "nope"][..],
        &["solve", "--system", "pendulum", "--tau", "3"][..],
        &["solve", "--system", "pendulum", "--tol-fix", "0"][..],
    ] {
        assert_eq!(weakkam(tmp.path(), args).status.code(), Some(4), "{args:?}");
    }
}

#[test]
fn non_convergence_exits_two() {
    // the refined propagator oscillates on the bump metric
    let tmp = TempDir::new().unwrap();
    let out = weakkam(tmp.path(), &["solve", "--system", "bump", "--c", "1,0.6", "--grid", "32", "-o", "out"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_is_honoured() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "[system]\nname = \"free\"\nparams = [1.0]\nc = [2.0]\n\n[grid]\nn = 64\n\n[run]\nhorizon = 1.0\noutput = \"cfg\"\nseed = 7\n",
    )
    .unwrap();
    ok(&weakkam(tmp.path(), &["solve", "--config", "run.toml"]));
    assert!((read_alpha(&tmp.path().join("cfg")) - 2.0).abs() < 1e-3);
    let written = fs::read_to_string(tmp.path().join("cfg/solve.config.toml")).unwrap();
    assert!(written.contains("n = 64") && written.contains("seed = 7"));
}

#[test]
fn twist_writes_configuration() {
    let tmp = TempDir::new().unwrap();
    ok(&weakkam(tmp.path(), &["twist", "--map", "quadratic", "--p", "2", "--q", "5", "-o", "out"]));
    let csv = fs::read_to_string(tmp.path().join("out/config.csv")).unwrap();
    assert!(csv.starts_with("i,x\n"));
    let summary = fs::read_to_string(tmp.path().join("out/twist.json")).unwrap();
    assert!(summary.contains("\"rotation\": 0.4"), "{summary}");
}

#[test]
fn report_runs_selected_criteria() {
    let tmp = TempDir::new().unwrap();
    ok(&weakkam(tmp.path(), &["report", "--suite", "paper", "--only", "3", "-o", "out"]));
    let report = fs::read_to_string(tmp.path().join("out/report.json")).unwrap();
    assert!(report.contains("\"passed\": true"));
    assert_eq!(weakkam(tmp.path(), &["report", "--only", "12", "-o", "out"]).status.code(), Some(4));
}
