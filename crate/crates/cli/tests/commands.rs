use std::path::Path;
use std::process::{Command, Output};

use kacwalk::density::IsotropicDensity;
use kacwalk::functionals::{entropy_h, epsilon_of_q, poisson_cost, qbar};
use kacwalk::Dim;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_kacwalk");

fn kacwalk(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .arg("--quiet")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let stamp = lines.next().unwrap().to_string();
    let _columns = lines.next().unwrap();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (stamp, rows)
}

const SMALL: &str = r#"{
  "seed": 3,
  "sim": {"n": 500, "t": 2.0, "replicas": 3},
  "scgf": {"n": 12, "clones": 50, "replicas": 2, "t": [1.0], "s": [-0.3, 0.0, 0.3]},
  "optimize": {"budget": 100, "restarts": 1, "surrogate_points": 5000, "final_points": 20000},
  "bounds": {"points": 3, "top": 2.0},
  "relax": {"n_dsmc": 5000, "tau_max": 1.0, "trace_points": 10},
  "control": {"from": 1.0, "n_dsmc": 20000, "points": 20000, "tau_max": 1.5, "t": 1.0, "kappa": 2.0, "tolerance": 1.0}
}"#;

#[test]
fn lln_smoke_run_with_two_particles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = kacwalk(
        dir.path(),
        r#"{"sim": {"n": 2, "t": 1.0, "replicas": 2}}"#,
        &["lln", "--seed", "9", "--out", out.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (stamp, rows) = csv_rows(&out.join("lln.csv"));
    assert!(stamp.starts_with("# kacwalk lln config_sha256=") && stamp.ends_with(" seed=9"), "{stamp}");
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "0");
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for (i, threads) in ["1", "1", "4"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}"));
        for cmd in ["lln", "scgf"] {
            let o = kacwalk(dir.path(), SMALL, &[cmd, "--threads", threads, "--out", out.to_str().unwrap()]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        }
        outs.push(out);
    }
    for name in ["lln.csv", "scgf.csv", "rate.csv"] {
        let a = std::fs::read(outs[0].join(name)).unwrap();
        for o in &outs[1..] {
            assert_eq!(a, std::fs::read(o.join(name)).unwrap(), "{name}");
        }
    }
    let (_, rows) = csv_rows(&outs[0].join("scgf.csv"));
    assert!(rows.iter().any(|r| r[0] == "0" && r[1] == "0"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [r#"{"sim": {"d": 4}}"#, r#"{"sim": {"replica": 3}}"#, "{not json", r#"{"sim": {"e": -1}}"#] {
        let o = kacwalk(dir.path(), bad, &["lln"]);
        assert_eq!(code(&o), 2, "{bad}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = Command::new(BIN).args(["lln", "--threads", "zero"]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn infeasible_kappa_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace(r#""from": 1.0"#, r#""from": 0.5"#).replace(r#""kappa": 2.0"#, r#""kappa": 1e-6"#);
    let o = kacwalk(dir.path(), &cfg, &["control", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kappa*"));
}

#[test]
fn bounds_table_rows_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = kacwalk(dir.path(), SMALL, &["bounds", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_rows(&out.join("bounds.csv"));
    let num = |s: &str| s.parse::<f64>().unwrap();
    let qb = qbar(1.0, Dim::Three);
    assert_eq!(num(&rows[0][0]), qb);
    assert_eq!(num(&rows[0][1]), 0.0);
    assert_eq!(rows[0][4], "0");
    assert!(rows[1..].iter().all(|r| r[4] == "inf"));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(out.join("bounds.json")).unwrap()).unwrap();
    assert!(json["qhat"].as_f64().unwrap() > 0.0);
    assert_eq!(json["master_seed"], 3);
    assert!(json["seed"].is_u64());
}

#[test]
fn second_order_column_matches_entropy_below_qbar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    // A grid ending at q̄ is not expressible through `top`, so check the formula the column uses.
    let o = kacwalk(dir.path(), SMALL, &["selftest", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d = Dim::Three;
    let q = 0.5 * qbar(1.0, d);
    let eps = epsilon_of_q(q, 1.0, d).unwrap();
    let h = entropy_h(&IsotropicDensity::maxwellian(eps, d).unwrap(), 1.0).unwrap();
    assert!((h - 3.0 * 2f64.ln()).abs() < 1e-4);
}

#[test]
fn relax_writes_trace_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = kacwalk(dir.path(), SMALL, &["relax", "--out", out.to_str().unwrap()]);
    assert!(code(&o) == 0 || code(&o) == 3, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_rows(&out.join("relax.csv"));
    for r in &rows {
        assert!((r[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-10);
    }
    let json: Value = serde_json::from_str(&std::fs::read_to_string(out.join("relax.json")).unwrap()).unwrap();
    assert_eq!(json["lifted"], true);
    assert!(json["fit"]["gamma"].is_number());
}

#[test]
fn equilibrium_control_costs_at_least_the_static_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = kacwalk(dir.path(), SMALL, &["control", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("control/manifest.json")).unwrap()).unwrap();
    let kappa = m["kappa"].as_f64().unwrap();
    let mass = m["total_flux_mass"].as_f64().unwrap();
    assert!((mass - kappa).abs() < 0.01 * kappa);
    // Among flux profiles of mass κ at M_e, the constant-in-time one is cheapest.
    let qb = qbar(1.0, Dim::Three);
    let t = m["t"].as_f64().unwrap();
    let floor = t * poisson_cost(kappa / t, qb);
    let cost = m["cost"].as_f64().unwrap();
    assert!(cost.is_finite() && cost >= floor - 0.02 * floor, "{cost} vs static {floor}");
    let slices = m["slices"].as_u64().unwrap() as usize;
    let (_, index) = csv_rows(&out.join("control/slices.csv"));
    assert_eq!(index.len(), slices);
    assert!(out.join("control/slices/slice_0000.csv").exists());
    let total: f64 = index.iter().map(|r| r[4].parse::<f64>().unwrap() + r[5].parse::<f64>().unwrap()).sum();
    assert!((total - mass).abs() < 1e-9 * mass);
}
