use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const DOUBLING: &str = r#"{"map": {"degree": 2}, "epsilons": [0.1, 0.05, 0.025], "grid": 32, "fourier_n": 32}"#;
const PARAMETRIC: &str = r#"{"map": {"degree": 2, "coeffs": [[1, 0.5, 0.0]]},
    "noise": {"noise_kind": {"kind": "parametric", "mode": 1}},
    "epsilons": [0.1, 0.05], "grid": 32, "fourier_n": 32}"#;

fn fiberspec(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiberspec"))
        .args(args)
        .current_dir(dir)
        .env_remove("FIBERSPEC_SEED")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()).collect()
}

#[test]
fn spectrum_of_doubling() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", DOUBLING);
    let out = fiberspec(&["spectrum", "c.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let json = stdout_json(&out);
    assert_eq!(json["tau0"], 0.0);
    assert!((json["lambda_r"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    let rows = csv_rows(&dir.path().join("o/density.csv"));
    assert_eq!(rows.len(), 512);
}

#[test]
fn spectrum_density_is_positive() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", PARAMETRIC);
    let out = fiberspec(&["spectrum", "c.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("o/density.csv")).unwrap();
    assert!(text.starts_with("x,value\n"));
    let min = csv_rows(&dir.path().join("o/density.csv"))
        .iter()
        .map(|r| r[1].parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(min > 0.0);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fiberspec(&["spectrum", "missing.json"], dir.path()).status.code(), Some(2));
    write(dir.path(), "bad.json", "{not json");
    assert_eq!(fiberspec(&["spectrum", "bad.json"], dir.path()).status.code(), Some(2));
    write(
        dir.path(),
        "big.json",
        &PARAMETRIC.replace("[0.1, 0.05]", "[0.6, 0.05]"),
    );
    let out = fiberspec(&["stability", "big.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));
    assert!(!dir.path().join("o").exists());
    write(dir.path(), "empty.json", r#"{"map": {"degree": 2}}"#);
    assert_eq!(fiberspec(&["stability", "empty.json"], dir.path()).status.code(), Some(2));
    assert_eq!(fiberspec(&["corr", "empty.json", "--omega", "1.5"], dir.path()).status.code(), Some(2));
}

#[test]
fn usage() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fiberspec(&["stability", "c.json", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(fiberspec(&[], dir.path()).status.code(), Some(2));
    let help = fiberspec(&["stability", "--help"], dir.path());
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    assert!(text.contains("--out") && text.contains("--seed"));
    let text = String::from_utf8_lossy(&fiberspec(&["corr", "--help"], dir.path()).stdout).into_owned();
    for flag in ["--omega", "--samples", "--nmax", "--epsilon", "--out"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn stability_exact_case() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", DOUBLING);
    let out = fiberspec(&["stability", "c.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("o/stability.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "epsilon,density_error_max_omega,lambda_bar,tau_eps,kp_defect");
    let rows = csv_rows(&dir.path().join("o/stability.csv"));
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r[1].parse::<f64>().unwrap() < 1e-10);
        assert!(r[3].parse::<f64>().unwrap() <= 0.55);
    }
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/stability.json")).unwrap()).unwrap();
    for key in ["tau0", "lambda_r", "bound", "status", "rate_slack"] {
        assert!(sidecar.get(key).is_some(), "{key}");
    }
    assert_eq!(sidecar["status"], "PASS");
}

#[test]
fn failed_clause_exits_4_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        &PARAMETRIC.replace("\"grid\": 32", "\"grid\": 32, \"tolerances\": {\"rate_slack\": -1.0}"),
    );
    let out = fiberspec(&["stability", "c.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/stability.json")).unwrap()).unwrap();
    assert_eq!(sidecar["status"], "FAILED");
    assert!(!sidecar["violations"].as_array().unwrap().is_empty());
    assert!(dir.path().join("o/stability.csv").exists());
}

#[test]
fn seeds_do_not_change_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", PARAMETRIC);
    let a = fiberspec(&["stability", "c.json", "--out", "a", "--seed", "1"], dir.path());
    let b = fiberspec(&["stability", "c.json", "--out", "b", "--seed", "2"], dir.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(
        fs::read(dir.path().join("a/stability.csv")).unwrap(),
        fs::read(dir.path().join("b/stability.csv")).unwrap()
    );
    assert_eq!(stdout_json(&a)["seed"], 1);
    assert_eq!(stdout_json(&b)["seed"], 2);
}

#[test]
fn seed_environment_override() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", &DOUBLING.replace("\"grid\"", "\"seed\": 5, \"grid\""));
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fiberspec"));
        cmd.args(["stability", "c.json", "--out", "o"]).current_dir(dir.path());
        cmd.env_remove("FIBERSPEC_SEED");
        if let Some(v) = env {
            cmd.env("FIBERSPEC_SEED", v);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        cmd.output().unwrap()
    };
    assert_eq!(stdout_json(&run(None, None))["seed"], 5);
    assert_eq!(stdout_json(&run(Some("6"), None))["seed"], 6);
    assert_eq!(stdout_json(&run(Some("6"), Some("7")))["seed"], 7);
    assert_eq!(run(Some("six"), None).status.code(), Some(2));
}

#[test]
fn corr_on_doubling() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", DOUBLING);
    let out = fiberspec(&["corr", "c.json", "--omega", "0.3", "--nmax", "6", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(&dir.path().join("o/corr.csv"));
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][0], "1");
    assert!((rows[0][1].parse::<f64>().unwrap() - 0.5).abs() < 1e-12);
    assert!(rows[1][1].parse::<f64>().unwrap().abs() < 1e-12);
    assert_eq!(stdout_json(&out)["tau"], 0.0);

    write(
        dir.path(),
        "flat.json",
        &DOUBLING.replace("\"grid\"", "\"observables\": {\"phi\": [[0, 0.0, 1.0]]}, \"grid\""),
    );
    let out = fiberspec(&["corr", "flat.json", "--samples", "4", "--out", "f"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(csv_rows(&dir.path().join("f/corr.csv"))
        .iter()
        .all(|r| r[1].parse::<f64>().unwrap().abs() < 1e-14));
    assert_eq!(stdout_json(&out)["tau"], 0.0);
}

#[test]
fn corr_on_shift_base() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"map": {"degree": 2}, "base": {"variant": "shift", "p": [0.5, 0.5]}, "depth": 4, "fourier_n": 32}"#,
    );
    let out = fiberspec(&["corr", "c.json", "--samples", "8", "--epsilon", "0.1", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_json(&out)["tau"].as_f64().unwrap() <= 0.55);
}
