use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn mfld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfld"))
        .args(args)
        .env_remove("MFLD_THREADS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const ISING: &str = r#"{"A": [[0, 0.4, -0.2], [0.4, 0, 0.1], [-0.2, 0.1, 0]], "b": [0.3, 0, -0.1]}"#;
const MEASURE: &str = r#"{"n": 3, "kind": "log_density", "values": [0.1, -0.4, 0.3, 0.0, 0.7, -0.2, 0.2, 0.5]}"#;
const MIXTURE: &str = r#"{"weights": [0.3, 0.7], "centers": [[-1.0], [2.0]]}"#;

#[test]
fn complexity_reports_width_and_bound() {
    let dir = TempDir::new().unwrap();
    let a = write(&dir, "a.json", ISING);
    let out = mfld(&["complexity", "--model", "ising", "--file", s(&a), "--samples", "10000", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let (mean, se, bound) =
        (v["mean"].as_f64().unwrap(), v["std_error"].as_f64().unwrap(), v["analytic_bound"].as_f64().unwrap());
    assert_eq!(v["samples"], 10000);
    assert!(se > 0.0);
    assert!(mean <= bound + 3.0 * se);
}

#[test]
fn identical_argv_gives_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let a = write(&dir, "a.json", ISING);
    let args = ["complexity", "--model", "ising", "--file", s(&a), "--samples", "3000", "--seed", "11"];
    let first = mfld(&args);
    let second = mfld(&args);
    assert_eq!(first.stdout, second.stdout);
    let threaded = Command::new(env!("CARGO_BIN_EXE_mfld")).args(args).env("MFLD_THREADS", "3").output().unwrap();
    assert_eq!(first.stdout, threaded.stdout);
    let other = mfld(&["complexity", "--model", "ising", "--file", s(&a), "--samples", "3000", "--seed", "12"]);
    assert_ne!(first.stdout, other.stdout);
}

#[test]
fn manifest_records_digest_and_params() {
    let dir = TempDir::new().unwrap();
    let a = write(&dir, "a.json", ISING);
    let out_path = dir.path().join("gw.json");
    let out = mfld(&["complexity", "--model", "ising", "--file", s(&a), "--samples", "500", "--seed", "3", "--out", s(&out_path)]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let body = fs::read(&out_path).unwrap();
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gw.json.manifest.json")).unwrap()).unwrap();
    let hex: String = Sha256::digest(&body).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(manifest["output_sha256"], hex);
    assert_eq!(manifest["subcommand"], "complexity");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["params"]["complexity"]["samples"], 500);
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn manifest_goes_to_stderr_without_out() {
    let out = mfld(&["ld", "bound", "--phi", "3", "--phi-t", "4", "--lip", "1", "--complexity", "2", "--n", "12",
        "--p", "0.5", "--t", "0.6", "--delta", "0.1"]);
    assert!(out.status.success());
    let m: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(m["subcommand"], "ld bound");
    assert_eq!(m["seed"], Value::Null);
}

#[test]
fn phi_grid_writes_csv() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("phi.csv");
    let out = mfld(&["meanfield", "phi", "--model", "triangle", "--N", "5", "--p", "0.3", "--t-grid", "0:0.05:0.2",
        "--restarts", "2", "--seed", "1", "--out", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,phi,feasible"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0], vec!["0", "0", "true"]);
    assert_eq!(rows[2][0], "0.1");
    let phis: Vec<f64> = rows.iter().filter(|r| r[2] == "true").map(|r| r[1].parse().unwrap()).collect();
    assert!(phis.windows(2).all(|w| w[1] >= w[0] - 1e-9));
}

#[test]
fn meanfield_solve_is_exact_for_linear_tables() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "f.json", r#"{"n": 2, "kind": "function", "values": [-1.0, 0.0, 0.0, 1.0]}"#);
    let out = mfld(&["meanfield", "solve", "--model", "table", "--file", s(&f), "--seed", "2"]);
    assert!(out.status.success());
    let v = json(&out);
    assert!(v["gap"].as_f64().unwrap().abs() < 1e-8);
    assert!(v["mean"].as_array().unwrap().len() == 2);
}

#[test]
fn w1_of_measure_with_itself_is_zero_and_plan_is_written() {
    let dir = TempDir::new().unwrap();
    let m = write(&dir, "m.json", MEASURE);
    let plan = dir.path().join("plan.csv");
    let out = mfld(&["transport", "w1", "--a", s(&m), "--b", s(&m), "--plan", s(&plan)]);
    assert!(out.status.success());
    assert!(json(&out)["w1"].as_f64().unwrap().abs() < 1e-12);
    let text = fs::read_to_string(&plan).unwrap();
    assert!(text.starts_with("src,dst,mass,hamming\n"));
    let mass: f64 = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap()).sum();
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn ld_tail_matches_hand_count() {
    // f = number of +1 coordinates on n = 2; P(f ≥ 2) = 1/4 at p = 1/2
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "f.json", r#"{"n": 2, "kind": "function", "values": [0, 1, 1, 2]}"#);
    let out = mfld(&["ld", "tail", "--file", s(&f), "--p", "0.5", "--t", "1.0"]);
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["log_tail"].as_f64().unwrap() - 0.25f64.ln()).abs() < 1e-12);
}

#[test]
fn ld_bound_flags_vacuous_upper() {
    let out = mfld(&["ld", "bound", "--phi", "3", "--phi-t", "4", "--lip", "1", "--complexity", "2", "--n", "12",
        "--p", "0.5", "--t", "0.6", "--delta", "0.1"]);
    let v = json(&out);
    assert_eq!(v["vacuous_upper"], true);
    assert_eq!(v["upper_bound"], 0.0);
    assert!(v["L"].as_f64().unwrap() > 0.0);
}

#[test]
fn localize_exports_mixture_and_traces() {
    let dir = TempDir::new().unwrap();
    let m = write(&dir, "m.json", MEASURE);
    let traces = dir.path().join("traces.csv");
    let out = mfld(&["localize", "--measure", s(&m), "--eps", "0.05", "--paths", "200", "--dt", "0.005", "--seed", "5",
        "--traces", s(&traces), "--trace-paths", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let atoms = v["atoms"].as_array().unwrap();
    assert_eq!(atoms.len(), 200);
    let w: f64 = atoms.iter().map(|a| a["weight"].as_f64().unwrap()).sum();
    assert!((w - 1.0).abs() < 1e-12);
    assert!(atoms[0]["theta"].as_array().unwrap().len() == 3);
    assert!(v["reconstruction_tv"].as_f64().unwrap() < 0.2);
    let text = fs::read_to_string(&traces).unwrap();
    assert!(text.starts_with("path,t,trace_h,trace_a,trace_gamma,hull_excess,x0,x1,x2\n"));
    assert!(text.lines().count() > 3);
}

#[test]
fn gaussian_subcommands_run() {
    let dir = TempDir::new().unwrap();
    let mix = write(&dir, "mix.json", MIXTURE);
    let lsi = mfld(&["gaussian", "lsi", "--mixture", s(&mix), "--seed", "1"]);
    assert!(lsi.status.success());
    let v = json(&lsi);
    assert_eq!(v["satisfied"], true);
    assert!((v["fisher"].as_f64().unwrap() - 2.702440965270401).abs() < 1e-8);

    let tilt = mfld(&["gaussian", "tilt", "--mixture", s(&mix), "--r", "2"]);
    assert!(tilt.status.success());
    assert_eq!(json(&tilt)["satisfied"], true);

    let fol = mfld(&["gaussian", "follmer", "--mixture", s(&mix), "--paths", "400", "--dt", "0.01",
        "--gw-samples", "2000", "--seed", "3"]);
    assert!(fol.status.success(), "{}", String::from_utf8_lossy(&fol.stderr));
    assert_eq!(json(&fol)["paths"], 400);
}

#[test]
fn ergm_decompose_small_model() {
    let dir = TempDir::new().unwrap();
    let m = write(&dir, "m.json", r#"{"N": 4, "terms": [{"edges": [[1, 2], [2, 3], [1, 3]], "beta": -0.2}]}"#);
    let out = mfld(&["ergm", "decompose", "--model", s(&m), "--eps", "0.1", "--paths", "40", "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["n"], 6);
    assert_eq!(v["edge_probabilities"].as_array().unwrap().len(), 40);
}

#[test]
fn verify_single_module_passes() {
    let out = mfld(&["verify", "cube_core", "--seed", "7"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["passed"], true);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["module"] == "cube_core"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let a = write(&dir, "a.json", ISING);
    let cases: Vec<Vec<&str>> = vec![
        vec!["complexity", "--model", "foo", "--seed", "1"],
        vec!["complexity", "--model", "ising", "--file", s(&a)],
        vec!["meanfield", "phi", "--model", "triangle", "--N", "5", "--t-grid", "0:0", "--seed", "1"],
        vec!["meanfield", "solve", "--model", "triangle", "--seed", "1"],
        vec!["complexity", "--model", "ising", "--file", "/nonexistent/a.json", "--seed", "1"],
        vec!["verify", "nothing", "--seed", "1"],
        vec!["localize", "--measure", s(&a), "--paths", "5", "--seed", "1"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let out = mfld(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn computation_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    // seven vertices is past the exact-enumeration cap
    let m = write(&dir, "m.json", r#"{"N": 7, "terms": [{"edges": [[1, 2]], "beta": 0.1}]}"#);
    let out = mfld(&["ergm", "decompose", "--model", s(&m), "--eps", "0.1", "--paths", "10", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let out = mfld(&["ld", "bound", "--phi", "0.1", "--phi-t", "0.2", "--lip", "1", "--complexity", "1", "--n", "10",
        "--p", "0.5", "--t", "0.5", "--delta", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let out = mfld(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("verify"));
}
