use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_GRIDS: &str = "[grids]\nquad_n = 16\nkernel_n = 8\np_grid_n = 8\n";

fn threebody(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_threebody"))
        .args(args)
        .env_remove("THREEBODY_THREADS")
        .output()
        .expect("binary runs")
}

fn run_config(command: &str, config: &str, dir: &Path) -> (Output, Value) {
    let cfg = dir.join("experiment.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let o = threebody(&[
        command,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let summary = fs::read_to_string(out.join("summary.json")).unwrap_or_else(|_| "null".into());
    (o, serde_json::from_str(&summary).unwrap())
}

fn builtin(name: &str, extra: &str) -> String {
    format!("[model]\nbuiltin = \"{name}\"\n\n{SMALL_GRIDS}\n{extra}")
}

#[test]
fn verify_reports_every_hypothesis_passing() {
    let dir = tempfile::tempdir().unwrap();
    let (o, s) = run_config("verify", &builtin("appendix-b-cos", ""), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(s["all_passed"], Value::Bool(true));
    assert_eq!(s["partial"], Value::Bool(false));
    assert_eq!(s["grids"]["quad_n"], 16);
    assert!(s["tolerances"]["count_tolerance"].is_number());
    let table = fs::read_to_string(dir.path().join("out/hypotheses.csv")).unwrap();
    assert!(table.starts_with("name,passed,detail"));
    assert!(!table.contains(",false,"));
}

#[test]
fn spectrum_at_mu_zero_is_the_free_band() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = builtin("appendix-b-cos", "[couplings]\nmu1 = \"mu0\"\nmu2 = \"mu0\"\n");
    let (o, s) = run_config("spectrum", &cfg, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(s["regime"], "AtOrBelowMuZero");
    let bands = fs::read_to_string(dir.path().join("out/bands.csv")).unwrap();
    let rows: Vec<&str> = bands.lines().collect();
    assert_eq!(rows.len(), 2);
    let vals: Vec<f64> = rows[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(vals[0], 0.0);
    assert!((vals[1] - 13.5).abs() < 1e-6);
}

#[test]
fn count_with_empty_schedule_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = builtin(
        "appendix-b-sin",
        "[couplings]\nmu1 = \"mu0\"\nmu2 = \"mu0\"\n\n[schedule]\nz = []\n",
    );
    let (o, s) = run_config("count", &cfg, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(s["partial"], Value::Bool(true));
    assert_eq!(s["error"]["kind"], "validation");
}

#[test]
fn count_table_has_the_fixed_columns_and_is_reproducible() {
    let cfg = builtin(
        "appendix-b-sin",
        "[couplings]\nmu1 = \"mu0\"\nmu2 = \"mu0\"\n\n[schedule]\nz = [-1e-2, -1e-3]\n",
    );
    let mut tables = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let (o, s) = run_config("count", &cfg, dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(s["couplings"][0]["token"], "mu0");
        tables.push(fs::read(dir.path().join("out/counts.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let text = String::from_utf8(tables.remove(0)).unwrap();
    assert!(text.starts_with("z,log_abs_z,count,grid_n,resolution_flag\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn json_format_writes_json_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = builtin("appendix-b-cos", "[output]\nformat = \"json\"\n");
    let (o, s) = run_config("verify", &cfg, dir.path());
    assert!(o.status.success());
    assert_eq!(s["tables"][0], "hypotheses.json");
    let rows: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/hypotheses.json")).unwrap()).unwrap();
    assert!(rows
        .as_array()
        .unwrap()
        .iter()
        .all(|r| r["passed"] == Value::Bool(true)));
}

#[test]
fn inline_model_matches_the_builtin() {
    let inline = format!(
        "[model]\n\
         dispersion = \"3 - cos(p1) - cos(q1) - cos(p1 - q1) + 3 - cos(p2) - cos(q2) - cos(p2 - q2) + 3 - cos(p3) - cos(q3) - cos(p3 - q3)\"\n\
         phi1 = \"1\"\nphi2 = \"1\"\nparity1 = \"even\"\nparity2 = \"even\"\n\n{SMALL_GRIDS}\n\
         [couplings]\nmu1 = \"mu0\"\nmu2 = \"mu0\"\n"
    );
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (oa, sa) = run_config("spectrum", &inline, a.path());
    let (ob, sb) = run_config(
        "spectrum",
        &builtin("appendix-b-cos", "[couplings]\nmu1 = \"mu0\"\nmu2 = \"mu0\"\n"),
        b.path(),
    );
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(ob.status.success());
    let mu = |s: &Value| s["couplings"][0]["mu"].as_f64().unwrap();
    assert!((mu(&sa) - mu(&sb)).abs() < 1e-9 * mu(&sb));
    assert_eq!(sa["regime"], sb["regime"]);
}

#[test]
fn parity_contradiction_is_reported_with_a_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\ndispersion = \"3 - cos(p1) - cos(q1) - cos(p1 - q1)\"\nphi1 = \"sin(p1)\"\nphi2 = \"1\"\nparity1 = \"even\"\nparity2 = \"even\"\n";
    let (o, s) = run_config("verify", cfg, dir.path());
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
    assert_eq!(s["error"]["kind"], "validation");
    assert!(!s["error"]["diagnostics"].as_array().unwrap().is_empty());
}

#[test]
fn unknown_key_and_missing_file_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run_config(
        "verify",
        "[model]\nbuiltin = \"appendix-b-cos\"\nwidth = 3\n",
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("width"));
    let o = threebody(&["verify", "--config", "/nonexistent/experiment.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("experiment.toml");
    fs::write(&cfg, builtin("appendix-b-cos", "")).unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_threebody"))
        .args([
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .env("THREEBODY_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_threebody"))
        .args(["verify", "--config", cfg.to_str().unwrap()])
        .env("THREEBODY_THREADS", "many")
        .output()
        .unwrap();
    assert!(!o.status.success());
}
