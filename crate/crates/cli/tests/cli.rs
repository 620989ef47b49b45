use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn riccilab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riccilab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const FLAT_STABILITY: &str = "experiment = \"stability\"\n[grid]\nresolution = [8]\n[perturbation]\namplitude = 0.0\n";

#[test]
fn run_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", FLAT_STABILITY);
    let out = dir.path().join("run");
    let res = riccilab(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("stability PASS CONVERGED"));
    for f in ["config.toml", "diagnostics.csv", "summary.json", "snapshots/initial.snap", "snapshots/final.snap"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let res = riccilab(&["inspect", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stdout).contains("\"PASS\""));
    let res = riccilab(&["inspect", out.join("snapshots/final.snap").to_str().unwrap()]);
    let text = String::from_utf8_lossy(&res.stdout);
    assert_eq!(res.status.code(), Some(0));
    assert!(text.contains("resolution      [8, 8]"), "{text}");
}

#[test]
fn overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", FLAT_STABILITY);
    let out = dir.path().join("run");
    let res = riccilab(&[
        "run", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--seed", "9", "--resolution", "10", "--quiet",
    ]);
    assert_eq!(res.status.code(), Some(0));
    let echoed = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 9"));
    assert!(echoed.contains("resolution = [10]"));
}

#[test]
fn unknown_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "experiment = \"stability\"\n[flow]\ntend = 2.0\n");
    let res = riccilab(&["run", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("tend"));
}

#[test]
fn spd_violation_exits_with_error_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "spd.toml",
        "experiment = \"stability\"\n[grid]\nresolution = [8]\n[perturbation]\nkind = \"tensor-slice\"\namplitude = 1000.0\n[neighborhood]\nproxy_order = 0\n",
    );
    let out = dir.path().join("run");
    let res = riccilab(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("not positive definite"));
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"verdict\": \"FAIL\""));
}

#[test]
fn failed_check_exits_with_one() {
    // N = 8 is too coarse for the 1% eigenvalue check
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ls.toml", "experiment = \"linear-stability\"\n[grid]\nresolution = [8]\n");
    let res = riccilab(&["run", "--config", &cfg, "--quiet"]);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stdout));
    assert!(String::from_utf8_lossy(&res.stdout).contains("second_eigenvalue_rel"));
}

#[test]
fn sweep_runs_each_case() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", FLAT_STABILITY);
    let out = dir.path().join("sweep");
    let res = riccilab(&[
        "sweep", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--seeds", "1,2", "--resolutions", "8,10", "--jobs", "2",
        "--quiet",
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(out.join("seed2-n10/summary.json").exists());
}

#[test]
fn identical_runs_write_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        "experiment = \"stability\"\nseed = 4\n[grid]\nresolution = [8]\n[flow]\nphase_switch = 0.05\nt_end = 0.1\n",
    );
    let mut csv = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        riccilab(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--quiet"]);
        csv.push(fs::read(out.join("diagnostics.csv")).unwrap());
    }
    assert!(csv[0].len() > 100);
    assert_eq!(csv[0], csv[1]);
}
