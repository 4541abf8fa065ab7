use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hkgeom"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("spawn hkgeom")
}

fn json_out(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn atoms(dir: &TempDir) {
    write(dir.path(), "a.json", r#"{"dim": 1, "points": [[0.0]], "weights": [2.0]}"#);
    write(dir.path(), "b.json", r#"{"dim": 1, "points": [[1.0]], "weights": [0.5]}"#);
}

#[test]
fn dist_single_atoms_closed_form() {
    let dir = TempDir::new().unwrap();
    atoms(&dir);
    let o = run(&["dist", "--metric", "ghk", "a.json", "b.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    let exact = 2.5 - 2.0 * 1f64.sqrt() * (-0.5f64).exp();
    assert!((v["value"].as_f64().unwrap() - exact).abs() < 1e-9);
    assert_eq!(v["metric"], "ghk");
    assert!(v["gap"].as_f64().unwrap().abs() < 1e-9);
    assert!(v["runtime_ms"].is_number());

    let o = run(&["dist", "--metric", "hk", "a.json", "b.json"], dir.path());
    let exact = 2.5 - 2.0 * 1f64.cos();
    assert!((json_out(&o)["value"].as_f64().unwrap() - exact).abs() < 1e-9);
}

#[test]
fn dist_w2_unequal_masses_is_infinite() {
    let dir = TempDir::new().unwrap();
    atoms(&dir);
    let o = run(&["dist", "--metric", "w2", "a.json", "b.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json_out(&o)["value"], "inf");
}

#[test]
fn dist_he_identical_is_zero_and_csv_input_works() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "m.csv", "x1,x2,w\n0.5,1.0,0.3\n-1.0,2.0,1.7\n");
    let o = run(&["dist", "--metric", "he", "m.csv", "m.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json_out(&o)["value"].as_f64(), Some(0.0));
}

#[test]
fn malformed_inputs_exit_one_with_a_diagnostic() {
    let dir = TempDir::new().unwrap();
    atoms(&dir);
    write(dir.path(), "bad.json", r#"{"dim": 1, "points": [[0.0]]}"#);
    let o = run(&["dist", "bad.json", "a.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("weights"));

    write(dir.path(), "bad.csv", "x1,w\n0.5,abc\n");
    let o = run(&["dist", "bad.csv", "a.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 1") && err.contains("column w"), "{err}");

    write(dir.path(), "neg.json", r#"{"dim": 1, "points": [[0.0]], "weights": [-1.0]}"#);
    assert_eq!(run(&["dist", "neg.json", "a.json"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["dist", "missing.json", "a.json"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["dist", "--metric", "tv", "a.json", "b.json"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["validate", "nope"], dir.path()).status.code(), Some(1));
}

#[test]
fn config_file_is_overridden_by_flags_and_embedded_in_reports() {
    let dir = TempDir::new().unwrap();
    atoms(&dir);
    write(dir.path(), "run.cfg", "# test config\nmetric = hk\ntol = 1e-8\n");
    let v = json_out(&run(&["dist", "--config", "run.cfg", "a.json", "b.json"], dir.path()));
    assert_eq!(v["metric"], "hk");
    assert_eq!(v["config"]["tol"].as_f64(), Some(1e-8));
    let v = json_out(&run(&["dist", "--config", "run.cfg", "--metric", "he", "a.json", "b.json"], dir.path()));
    assert_eq!(v["metric"], "he");

    write(dir.path(), "bad.cfg", "metric = hk\nspeed = 3\n");
    let o = run(&["dist", "--config", "bad.cfg", "a.json", "b.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("speed"));
}

#[test]
fn stochastic_commands_need_a_seed() {
    let dir = TempDir::new().unwrap();
    for args in [&["sample", "gamma"][..], &["simulate", "besq"], &["validate", "bessel"]] {
        let o = run(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    }
}

#[test]
fn simulate_besq_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let args =
        ["simulate", "besq", "--theta", "1", "--x0", "1", "--T", "1", "--dt", "1e-2", "--paths", "50", "--seed", "1"];
    let a = run(&args, dir.path());
    let b = run(&args, dir.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("path,t,x"));
    assert_eq!(text.lines().count(), 1 + 50 * 101);
    let mut out = args.to_vec();
    out.extend(["--out", "paths.csv"]);
    assert_eq!(run(&out, dir.path()).status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(dir.path().join("paths.csv")).unwrap(), text);
}

fn jsonl(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn mass(m: &Value) -> f64 {
    m["weights"].as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).sum()
}

#[test]
fn sample_df_gives_probability_measures() {
    let dir = TempDir::new().unwrap();
    let o = run(&["sample", "df", "--beta", "1", "--n", "100", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let ms = jsonl(&o);
    assert_eq!(ms.len(), 100);
    assert!(ms.iter().all(|m| (mass(m) - 1.0).abs() < 1e-8));
}

#[test]
fn sample_mlp_masses_stay_in_the_window() {
    let dir = TempDir::new().unwrap();
    let o = run(&["sample", "mlp", "--theta", "2", "--window", "1,4", "--n", "100", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let ms = jsonl(&o);
    assert_eq!(ms.len(), 100);
    assert!(ms.iter().all(|m| (1.0 - 1e-9..=4.0 + 1e-9).contains(&mass(m))));
    let o = run(&["sample", "mlp", "--window", "4,1", "--seed", "1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_duality_and_limits_pass() {
    let dir = TempDir::new().unwrap();
    for args in [&["validate", "duality", "--n", "20", "--seed", "7"][..], &["validate", "limits"]] {
        let o = run(args, dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
        let v = json_out(&o);
        assert_eq!(v["passed"], true);
        assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
        assert!(v["config"].is_object());
    }
}

#[test]
fn validate_mecke_mlp() {
    let dir = TempDir::new().unwrap();
    let o = run(&["validate", "mecke-mlp", "--theta", "2", "--n", "100000", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    assert_eq!(v["config"]["theta"].as_f64(), Some(2.0));
    assert_eq!(v["config"]["seed"].as_u64(), Some(7));
}

#[test]
fn failed_checks_exit_three() {
    let dir = TempDir::new().unwrap();
    let o = run(&["validate", "gradient", "--n", "3", "--seed", "1", "--tol", "1e-300"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(json_out(&o)["passed"], false);
}

#[test]
fn mollify_and_potentials_write_files() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "mu.json", r#"{"dim": 1, "points": [[0.4], [-0.8]], "weights": [0.5, 0.3]}"#);
    let o = run(&["mollify", "mu.json", "--eps", "0.4", "--spacing", "0.05", "--out", "t.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let total: f64 = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.2).abs() < 1e-9, "{total}");

    let o = run(&["potentials", "mu.json", "--eps", "0.4", "--spacing", "0.05", "--out", "pot.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    let (dual, let_value) = (v["duality_value"].as_f64().unwrap(), v["let_value"].as_f64().unwrap());
    assert!((dual - let_value).abs() <= 1e-6 * (1.0 + let_value));
    assert!(v["psi_lip"].as_f64().unwrap() <= 1.0 + 1e-9);
    let pot = std::fs::read_to_string(dir.path().join("pot.csv")).unwrap();
    assert_eq!(pot.lines().next(), Some("kind,x1,value"));
    assert!(pot.lines().any(|l| l.starts_with("psi,")));
}

#[test]
fn limits_command_reports_the_ladder() {
    let dir = TempDir::new().unwrap();
    atoms(&dir);
    let o = run(&["limits", "a.json", "b.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    assert_eq!(v["table"]["rows"].as_array().unwrap().len(), 7);
    assert_eq!(v["table"]["dilated_monotone"], true);
    assert_eq!(v["table"]["wasserstein_sq"], "inf");
}
