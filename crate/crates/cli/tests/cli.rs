use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pesin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pesin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    pesin(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const DIAG: &str = r#"{
  "system": {"type": "builtin", "name": "diag", "params": {"d0": 0.5, "d1": 2.0}},
  "pesin": {"a": -0.6, "b": -0.1, "k": 1, "eps": 0.00125, "l_cap": 1.0, "r_cap": 1.0, "c_cap": 1.0},
  "chart_levels": [0, 1],
  "budgets": {"spectrum": {"n": 500}, "simulate_steps": 50}
}"#;

#[test]
fn missing_config_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = run("spectrum", &tmp.path().join("absent.json"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"system": {"type": "builtin", "name": "ou"}, "bogus": 1}"#);
    assert_eq!(run("simulate", &cfg, &tmp.path().join("o"), &[]).status.code(), Some(2));
}

#[test]
fn bad_flag_values_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", DIAG);
    let out = run("spectrum", &cfg, &tmp.path().join("o"), &["--format", "xml"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(pesin(&["spectrum"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_three_and_writes_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"system": {"type": "linear", "matrices": [[[3.0]]], "probs": [1.0]}, "x0": [0.5],
            "budgets": {"simulate_steps": 2000}}"#,
    );
    let out_dir = tmp.path().join("o");
    assert_eq!(run("simulate", &cfg, &out_dir, &[]).status.code(), Some(3));
    let m = json(&out_dir.join("manifest.json"));
    assert_eq!(m["status"], "error");
    assert_eq!(m["exit_code"], 3);
}

#[test]
fn unsupported_scheme_exits_four() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"system": {"type": "builtin", "name": "duffing_vdp"}, "discretization": {"order": 2}}"#,
    );
    assert_eq!(run("spectrum", &cfg, &tmp.path().join("o"), &[]).status.code(), Some(4));
}

#[test]
fn spectrum_of_diag_system() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", DIAG);
    let out_dir = tmp.path().join("o");
    let out = run("spectrum", &cfg, &out_dir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let l = json(&out_dir.join("lambda.json"));
    let rho: Vec<f64> = l["rho"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let l2 = 2f64.ln();
    assert!((rho[0] + l2).abs() < 1e-12 && (rho[1] - l2).abs() < 1e-12, "{rho:?}");
    assert!(out_dir.join("charts/spectrum.json").exists());
    let m = json(&out_dir.join("manifest.json"));
    assert_eq!(m["pipeline"], "spectrum");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn every_subcommand_writes_its_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", DIAG);
    let cases: [(&str, &[&str]); 5] = [
        ("simulate", &["trajectory.pesn"]),
        ("audit", &["audit.json"]),
        ("stable-manifold", &["charts/chart_0.json", "charts/chart_1.json"]),
        ("holonomy", &["holonomy.json", "charts/holonomy_jacobians.json"]),
        ("spectrum", &["lambda.json"]),
    ];
    for (sub, files) in cases {
        let out_dir = tmp.path().join(sub);
        let out = run(sub, &cfg, &out_dir, &[]);
        assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
        for f in files {
            assert!(out_dir.join(f).exists(), "{sub}: missing {f}");
        }
        let m = json(&out_dir.join("manifest.json"));
        let listed: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        for f in files {
            assert!(listed.contains(f), "{sub}: {f} not in manifest");
        }
    }
}

#[test]
fn trajectory_cache_round_trips() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", DIAG);
    let out_dir = tmp.path().join("o");
    assert!(run("simulate", &cfg, &out_dir, &[]).status.success());
    let traj = pesin_core::cache::read_trajectory(&out_dir.join("trajectory.pesn")).unwrap();
    assert_eq!(traj.dim, 2);
    assert_eq!(traj.len(), 51);
}

const OU_ENTROPY: &str = r#"{
  "system": {"type": "builtin", "name": "ou"},
  "discretization": {"substeps": 16},
  "budgets": {"entropy": {"m_omega": 8, "m_x": 2000, "n_max": 8}},
  "partition": {"g": 16}
}"#;

#[test]
fn entropy_csv_is_identical_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", OU_ENTROPY);
    let bodies: Vec<Vec<u8>> = ["1", "4", "8"]
        .iter()
        .map(|t| {
            let out_dir = tmp.path().join(format!("t{t}"));
            let out = run("entropy", &cfg, &out_dir, &["--threads", t, "--seed", "7"]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            std::fs::read(out_dir.join("entropy.csv")).unwrap()
        })
        .collect();
    assert_eq!(bodies[0], bodies[1]);
    assert_eq!(bodies[0], bodies[2]);
    let text = String::from_utf8(bodies[0].clone()).unwrap();
    assert!(text.starts_with("n,H,SE,Momega,Mx,g\n"));
    assert_eq!(text.lines().count(), 9);
}

#[test]
fn seed_flag_changes_results_and_json_format_works() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", OU_ENTROPY);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run("entropy", &cfg, &a, &["--seed", "1"]).status.success());
    assert!(run("entropy", &cfg, &b, &["--seed", "2"]).status.success());
    assert_ne!(std::fs::read(a.join("entropy.csv")).unwrap(), std::fs::read(b.join("entropy.csv")).unwrap());
    let j = tmp.path().join("j");
    assert!(run("entropy", &cfg, &j, &["--format", "json"]).status.success());
    let m = json(&j.join("manifest.json"));
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.iter().any(|o| o.ends_with(".json") && o.starts_with("entropy")), "{outputs:?}");
}

#[test]
fn pesin_verify_on_ou_is_equality_consistent() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"system": {"type": "builtin", "name": "ou"}, "discretization": {"substeps": 16},
            "budgets": {"entropy": {"m_omega": 8, "m_x": 2000, "n_max": 10, "g_max": 32},
                        "spectrum_sampler": {"samples": 8, "n": 500}}}"#,
    );
    let out_dir = tmp.path().join("o");
    let out = run("pesin-verify", &cfg, &out_dir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out_dir.join("pesin_report.json"));
    assert_eq!(r["verdict"], "equality-consistent");
    assert_eq!(r["lyapunov_sum"], 0.0);
    for f in ["audit.json", "entropy.csv", "charts/entropy_curve.json", "charts/ladder.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
}
