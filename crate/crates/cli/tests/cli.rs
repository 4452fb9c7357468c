use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use triad_core::builtin_paper_model;

fn triad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triad"))
        .args(args)
        .output()
        .expect("spawn triad")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_json(path: &Path, v: &Value) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

fn small_full_config(dir: &Path) -> PathBuf {
    write_json(
        &dir.join("full.json"),
        &json!({
            "model": "full",
            "epsilon": 1.0,
            "stepper": { "dt": 1e-3, "record_stride": 10 },
            "t_final": 20.0,
            "ensemble": 2,
            "seed": 7,
            "stats": {
                "cf_max_lag_x": 1.0,
                "cf_max_lag_e": 2.0,
                "kurt_max_lag_x": 0.5,
                "kurt_max_lag_e": 0.5,
                "density_bins": 20
            }
        }),
    )
}

fn perturbed_coefficients(dir: &Path, by: f64) -> PathBuf {
    let mut c = builtin_paper_model();
    c.xyy[0].a_xyy += by;
    let p = dir.join("perturbed.json");
    c.to_json_file(&p).unwrap();
    p
}

#[test]
fn validate_builtin_passes() {
    let o = triad(&["validate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], true);
}

#[test]
fn validate_projected_at_tight_tolerance() {
    assert_eq!(code(&triad(&["validate", "--project", "--tol", "1e-12"])), 0);
}

#[test]
fn validate_rejects_non_conservative_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = perturbed_coefficients(dir.path(), 1e-3);
    let p = p.to_str().unwrap();
    assert_eq!(code(&triad(&["validate", p])), 1);
    assert_eq!(code(&triad(&["validate", p, "--project", "--tol", "1e-12"])), 0);
    let small = perturbed_coefficients(dir.path(), 1e-6);
    let small = small.to_str().unwrap();
    assert_eq!(code(&triad(&["validate", small])), 0);
    assert_eq!(code(&triad(&["validate", small, "--tol", "1e-12"])), 1);
}

#[test]
fn validate_reports_bad_indices_as_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = builtin_paper_model();
    c.xyy[0].k = 11;
    let p = dir.path().join("bad.json");
    c.to_json_file(&p).unwrap();
    assert_eq!(code(&triad(&["validate", p.to_str().unwrap()])), 1);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&triad(&["frobnicate"])), 2);
    assert_eq!(code(&triad(&["validate", "/nonexistent/c.json"])), 2);
    assert_eq!(code(&triad(&["simulate"])), 2);
    assert_eq!(code(&triad(&["reproduce", "--figure", "fig99"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.json");
    std::fs::write(&cfg, "{ \"model\": ").unwrap();
    assert_eq!(code(&triad(&["simulate", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn diverging_run_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        &dir.path().join("bad.json"),
        &json!({
            "model": "full",
            "epsilon": 0.1,
            "stepper": { "dt": 0.5 },
            "t_final": 50.0,
            "ensemble": 2
        }),
    );
    let out = dir.path().join("out");
    let o = triad(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_then_stats_reproduces_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_full_config(dir.path());
    let out = dir.path().join("sim");
    let o = triad(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["traj_000.csv", "traj_001.csv", "cf_x.csv", "cf_E.csv", "kurt_x.csv", "density_E.csv", "summary.json", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let header = std::fs::read_to_string(out.join("traj_000.csv")).unwrap();
    assert!(header.starts_with("t,x,E\n"));
    assert!(std::fs::read_to_string(out.join("cf_x.csv")).unwrap().starts_with("lag,cf,stderr\n"));
    assert!(std::fs::read_to_string(out.join("kurt_x.csv")).unwrap().starts_with("lag,kurt,stderr\n"));
    assert!(std::fs::read_to_string(out.join("density_E.csv")).unwrap().starts_with("bin_center,density\n"));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.is_object());

    let again = dir.path().join("stats");
    let o = triad(&[
        "stats",
        "--config",
        cfg.to_str().unwrap(),
        "--in",
        out.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["cf_x.csv", "cf_E.csv", "kurt_x.csv", "density_x.csv"] {
        assert_eq!(
            std::fs::read(out.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f} differs after round trip"
        );
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_full_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&triad(&["simulate", "--config", cfg, "--seed", "1", "--out", a.to_str().unwrap()])), 0);
    assert_eq!(code(&triad(&["simulate", "--config", cfg, "--seed", "2", "--out", b.to_str().unwrap()])), 0);
    assert_ne!(
        std::fs::read(a.join("traj_000.csv")).unwrap(),
        std::fs::read(b.join("traj_000.csv")).unwrap()
    );
}

#[test]
fn estimate_m_writes_bath_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bath");
    let o = triad(&["estimate-m", "--t-final", "300", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("bath_stats.csv")).unwrap();
    assert!(csv.starts_with("tau,C_tau\n"));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(out.join("bath_summary.json")).unwrap()).unwrap();
    for key in ["M", "E_level", "tau_max", "first_moments", "max_abs_mixed_moment", "stderr_M"] {
        assert!(s.get(key).is_some(), "summary lacks {key}");
    }
    assert_eq!(s["E_level"], 10.0);
    assert!(s["M"].as_f64().unwrap() > 0.0);
    assert!(out.join("compatibility.json").exists());
}

#[test]
fn reproduce_small_ct_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ct");
    let o = triad(&[
        "reproduce",
        "--figure",
        "ct_table",
        "--t-final",
        "300",
        "--ensemble",
        "1",
        "--epsilons",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").exists());
    let table = std::fs::read_to_string(out.join("ct_table.csv")).unwrap();
    assert!(table.starts_with("variable,ct_eps1\n"), "{table}");
    assert!(table.lines().any(|l| l.starts_with("x,")));
}
