//! End-to-end runs of the `degenheat` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_degenheat"));
    c.env_remove("DEGENHEAT_WORKERS");
    c
}

fn run(dir: &Path, cmd: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{cmd}-config.json"));
    std::fs::write(&cfg, config).unwrap();
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn envelope(dir: &Path, cmd: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out").join(format!("{cmd}.json"))).unwrap()).unwrap()
}

fn csv(dir: &Path, name: &str) -> Vec<Vec<String>> {
    std::fs::read_to_string(dir.join("out").join(format!("{name}.csv")))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn kernel_table_matches_heat_kernel_at_a_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"params": {"n": 2, "a": 0.0},
        "kernel": {"pole": [0.1, -0.2, 0.0],
                   "grid": {"lo": [-1, -1], "hi": [1, 1], "counts": [4, 3], "times": [-0.5, 0.0, 0.3, 1.2]}}}"#;
    let out = run(dir.path(), "kernel", cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv(dir.path(), "kernel");
    assert_eq!(rows[0][..4], ["x1", "x2", "t", "gamma"]);
    assert_eq!(rows.len(), 1 + 4 * 12);
    for r in &rows[1..] {
        let (x, y, t, g) = (num(&r[0]), num(&r[1]), num(&r[2]), num(&r[3]));
        if t <= 0.0 {
            assert_eq!(g, 0.0);
            continue;
        }
        let d2 = (x - 0.1).powi(2) + (y + 0.2).powi(2);
        let want = (-d2 / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t);
        assert!(((g - want) / want).abs() < 1e-12, "{g} vs {want}");
    }
    let env = envelope(dir.path(), "kernel");
    assert_eq!(env["command"], "kernel");
    assert_eq!(env["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn output_is_independent_of_worker_count() {
    let cfg = r#"{"params": {"n": 2, "a": 0.4},
        "kernel": {"pole": [0.0, 0.3, 0.0],
                   "grid": {"lo": [-1, -1], "hi": [1, 1], "counts": [9, 9], "times": [0.2, 0.7]}}}"#;
    let mut outputs = Vec::new();
    for w in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let out = run(dir.path(), "kernel", cfg, &["--workers", w]);
        assert_eq!(out.status.code(), Some(0));
        let env = envelope(dir.path(), "kernel");
        outputs.push((
            std::fs::read(dir.path().join("out/kernel.csv")).unwrap(),
            env["payload"].to_string(),
            env["config_digest"].to_string(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn default_checks_pass_and_detect_perturbation() {
    for a in ["-0.5", "0.0", "0.5"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = format!(r#"{{"params": {{"n": 2, "a": {a}}}, "check": {{}}}}"#);
        let out = run(dir.path(), "check", &cfg, &[]);
        assert_eq!(out.status.code(), Some(0), "a={a}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(envelope(dir.path(), "check")["payload"]["failures"], 0);
    }
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "check", r#"{"params": {"n": 2, "a": 0.3}, "check": {"perturb": 1e-3}}"#, &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("check", r#"{"params": {"n": 2, "a": 0.3}, "check": {"mass": [], "semigroup": [], "residual": []}}"#),
        ("check", r#"{"params": {"n": 2, "a": 1.0}}"#),
        ("check", r#"{"params": {"n": 2, "a": 0.3}, "check": {"colour": 1}}"#),
        ("kernel", r#"{"params": {"n": 2, "a": 0.3}}"#),
        ("kernel", r#"{"params": {"n": 2, "a": 0.3}, "kernel": {"pole": [0, 0], "points": [[0, 0, 1]]}}"#),
        ("wiener", r#"{"params": {"n": 2, "a": 0.3}, "wiener": {"point": [0, 0, 0.5],
            "domain": {"primitives": [{"type": "box", "lo": [-1, -1], "hi": [1, 1], "t": [0, 1]}]}}}"#),
        ("check", "not json"),
    ];
    for (cmd, cfg) in cases {
        let out = run(dir.path(), cmd, cfg, &[]);
        assert_eq!(out.status.code(), Some(2), "{cmd}: {cfg}");
    }
    let out = bin().arg("check").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tampered_config_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"params": {"n": 2, "a": 0.0}, "kernel": {"pole": [0, 0, 0], "points": [[0, 0, 1]]}}"#;
    let out = run(dir.path(), "kernel", cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let digest = envelope(dir.path(), "kernel")["config_digest"].as_str().unwrap().to_string();
    let out = run(dir.path(), "kernel", cfg, &["--expect-digest", &digest]);
    assert_eq!(out.status.code(), Some(0));
    let tampered = cfg.replace("1]]", "2]]");
    let out = run(dir.path(), "kernel", &tampered, &["--expect-digest", &digest]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dirichlet_constant_data_and_indicator_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"params": {"n": 2, "a": -0.4},
        "dirichlet": {"lo": [0, 0.5], "hi": [1, 1.5], "t_end": 0.25, "cells": [3, 3], "steps": 4,
            "data": {"kind": "constant", "value": 2.0},
            "probes": [[0.4, 0.9, 0.2], [0.5, 1.0, 0.1]],
            "u0": [[0.5, 1.0, 0.25], [0.0, 1.0, 0.25], [1.0, 0.5, 0.25], [1.6, 1.0, 0.25]]}}"#;
    let out = run(dir.path(), "dirichlet", cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for r in &csv(dir.path(), "dirichlet")[1..] {
        assert!((num(&r[3]) - 2.0).abs() <= 1e-6);
    }
    let want = [-1.0, -0.5, -0.25, 0.0];
    for (r, w) in csv(dir.path(), "dirichlet_u0")[1..].iter().zip(want) {
        assert!((num(&r[3]) - w).abs() < 5e-3, "{r:?}");
    }
}

#[test]
fn dirichlet_gamma_data_converges() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"params": {"n": 2, "a": 0.3},
        "dirichlet": {"lo": [0, 0], "hi": [1, 1], "t_end": 0.25, "cells": [2, 2], "steps": 2,
            "data": {"kind": "gamma", "pole": [0.4, 0.6, -0.15]},
            "probes": [[0.3, 0.3, 0.125], [0.5, 0.5, 0.25], [0.7, 0.7, 0.25]], "refine": true}}"#;
    let out = run(dir.path(), "dirichlet", cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let env = envelope(dir.path(), "dirichlet");
    assert!(env["payload"]["observed_order"].as_f64().unwrap() >= 1.0);
}

#[test]
fn solver_budget_exhaustion_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"params": {"n": 2, "a": 0.3},
        "dirichlet": {"lo": [0, 0], "hi": [1, 1], "t_end": 0.25, "cells": [2, 2], "steps": 2,
            "data": {"kind": "gamma", "pole": [0.4, 0.6, -0.15]},
            "probes": [[0.5, 0.5, 0.2]], "solver": {"max_sweeps": 1}}}"#;
    let out = run(dir.path(), "dirichlet", cfg, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flat_capacity_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"params": {"n": 2, "a": 0.5},
        "capacity": {"set": {"primitives": [{"type": "box", "lo": [-1, -1], "hi": [1, 1], "t": [0, 0]}]},
            "lo": [-1, -1], "hi": [1, 1], "t": [0, 0], "cells": 4, "ht": 0.25}}"#;
    let out = run(dir.path(), "capacity", cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let env = envelope(dir.path(), "capacity");
    assert!(env["payload"]["oracle_rel_gap"].as_f64().unwrap() < 0.02);
    let rows = csv(dir.path(), "capacity_equilibrium");
    let mass: f64 = rows[1..].iter().map(|r| num(&r[3])).sum();
    assert!((mass - env["payload"]["fine"].as_f64().unwrap()).abs() < 1e-9 * mass);
}

#[test]
fn wiener_sweep_agrees_at_a_flat_bottom() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"params": {"n": 2, "a": 0.0},
        "wiener": {"point": [0, 0, 0],
            "domain": {"primitives": [{"type": "box", "lo": [-1, -1], "hi": [1, 1], "t": [0, 1]}]},
            "options": {"k_max": 6, "tail": 3}}}"#;
    let out = run(dir.path(), "wiener", cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let env = envelope(dir.path(), "wiener");
    assert_eq!(env["payload"]["verdicts_agree"], true);
    assert_eq!(env["payload"]["reports"][0]["verdict"], "likely-regular");
    assert_eq!(csv(dir.path(), "wiener").len(), 1 + 3 * 6);
}

#[test]
fn mean_value_of_a_solution_is_its_center_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"params": {"n": 2, "a": -0.3},
        "meanvalue": {"point": [0.2, 0.3, 1.0], "radii": [0.05],
            "function": {"kind": "solution", "constant": 1.0, "poles": [{"pole": [0, 0.3, 0], "weight": 2.0}]}}}"#;
    let out = run(dir.path(), "meanvalue", cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let env = envelope(dir.path(), "meanvalue");
    assert!(env["payload"]["max_rel_error"].as_f64().unwrap() < 1e-3);
}

#[test]
fn harnack_quotient_of_constants_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"params": {"n": 2, "a": 0.3},
        "harnack": {"r": 0.5, "levels": [0], "function": {"kind": "solution", "constant": 3.0}, "scale": 2.0}}"#;
    let out = run(dir.path(), "harnack", cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let env = envelope(dir.path(), "harnack");
    assert!((env["payload"]["quotients"][0].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(env["payload"]["scaling_gap"].as_f64().unwrap() < 1e-12);
}

#[test]
fn stdout_mode_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.json");
    std::fs::write(&cfg_path, r#"{"params": {"n": 2, "a": 0.0}, "kernel": {"pole": [0, 0, 0], "points": [[0, 0, 1]]}}"#)
        .unwrap();
    let out = bin().arg("kernel").arg("--config").arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("x1,x2,t,gamma"));
    assert_eq!(text.lines().count(), 2);
}
