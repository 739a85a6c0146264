//! End-to-end runs of the `fastslow` binary.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn fastslow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastslow")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

fn run_ok(cmd: &str, config: &str, dir: &TempDir) -> Vec<csv::StringRecord> {
    let cfg = write_config(dir.path(), config);
    let out = dir.path().join("out");
    let o = fastslow(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    read_rows(&out.join(format!("{cmd}.csv")))
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

fn num(r: &csv::StringRecord, i: usize) -> f64 {
    r[i].parse().unwrap()
}

#[test]
fn variance_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let rows = run_ok("variance", r#"{"theta0": 0.5, "t_end": 1.0}"#, &dir);
    let last = rows.last().unwrap();
    assert_eq!(num(last, 0), 1.0);
    // At θ = 1/2: ω̄' = −π and Σ² = 1/2, so Var₁ = (1 − e^{−2π}) / (4π).
    let exact = (1.0 - (-2.0 * std::f64::consts::PI).exp()) / (4.0 * std::f64::consts::PI);
    assert!((num(last, 1) - exact).abs() < 1e-6, "{}", num(last, 1));
    assert!((num(last, 1) - 0.079432).abs() < 5e-6);
}

#[test]
fn rate_table_minimum_at_mean() {
    let dir = TempDir::new().unwrap();
    let rows = run_ok("rate-table", r#"{"theta0": 0.5}"#, &dir);
    assert_eq!(rows.len(), 9);
    let z: Vec<(f64, f64)> = rows.iter().map(|r| (num(r, 1), num(r, 2))).collect();
    assert!(z.iter().all(|&(_, v)| v >= -1e-8));
    let min = z.iter().copied().fold((f64::NAN, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    assert_eq!(min.0, 0.0);
    assert!(min.1.abs() < 1e-8);
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = fastslow(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert!(o.stdout.is_empty());
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let cases = [
        r#"{"epsilon": 1e-3, "bogus": true}"#,
        r#"{"system": {"preset": null, "f": "2*x", "omega": "sin x"}}"#,
        r#"{"system": {"preset": "no-such-preset"}}"#,
        r#"{"discretization": {"kind": "fourier", "modes": 100}}"#,
        "not json",
    ];
    for json in cases {
        let cfg = write_config(dir.path(), json);
        let o = fastslow(&["spectrum", "--config", &cfg, "--out", out]);
        assert_eq!(o.status.code(), Some(2), "{json}");
        assert!(!o.stderr.is_empty());
    }
    let cfg = write_config(dir.path(), r#"{"system": {"preset": null, "f": "2*x", "omega": "sin x"}}"#);
    let o = fastslow(&["spectrum", "--config", &cfg, "--out", out]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("offset 4") && err.contains("\"(\""), "{err}");
    let o = fastslow(&["spectrum", "--config", "/nonexistent/config.json", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"system": {"preset": "coboundary-control"}, "llt": {"n_paths": 100}}"#);
    let out = dir.path().join("out");
    let o = fastslow(&["llt", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn resource_cap_exits_4() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    for json in [r#"{"simulate": {"steps": 100000000}}"#, r#"{"epsilon": 1e-4, "average": {"paths": 2000000}}"#] {
        let cfg = write_config(dir.path(), json);
        let cmd = if json.contains("simulate") { "simulate" } else { "average" };
        let o = fastslow(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(4), "{json}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"epsilon": 1e-3, "t_end": 0.3, "llt": {"n_paths": 3000, "bins": 16}, "simulate": {"stride": 7}}"#,
    );
    for cmd in ["llt", "simulate"] {
        let first = dir.path().join(format!("first-{cmd}"));
        let o = fastslow(&[cmd, "--config", &cfg, "--seed", "42", "--out", first.to_str().unwrap()]);
        assert!(o.status.success());
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(first.join(format!("{cmd}.json"))).unwrap()).unwrap();
        assert_eq!(manifest["seed"], 42);
        assert_eq!(manifest["command"], cmd);
        assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
        assert!(manifest["versions"]["fastslow"].is_string());

        let second = dir.path().join(format!("second-{cmd}"));
        let m = first.join(format!("{cmd}.json"));
        let o = fastslow(&["replay", m.to_str().unwrap(), "--out", second.to_str().unwrap(), "--threads", "1"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let a = std::fs::read(first.join(format!("{cmd}.csv"))).unwrap();
        let b = std::fs::read(second.join(format!("{cmd}.csv"))).unwrap();
        assert_eq!(a, b, "{cmd} CSV differs on replay");

        let third = dir.path().join(format!("third-{cmd}"));
        let o = fastslow(&[cmd, "--config", &cfg, "--seed", "43", "--out", third.to_str().unwrap()]);
        assert!(o.status.success());
        assert_ne!(a, std::fs::read(third.join(format!("{cmd}.csv"))).unwrap(), "{cmd} ignores the seed");
    }
}

#[test]
fn every_subcommand_writes_csv_and_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "epsilon": 1e-3, "t_end": 0.1,
            "simulate": {"stride": 10},
            "spectrum": {"thetas": 4},
            "average": {"paths": 50},
            "variance": {"sde_paths": 200},
            "path_rate": {"quad_dt": 0.05},
            "domain": {"p_max": 5},
            "pairs": {"phi_re": "0.1*cos(2*pi*x)", "steps": 2},
            "mgf": {"n_paths": 200},
            "llt": {"n_paths": 500, "bins": 10},
            "ldp_probe": {"n_paths": 200, "eps_list": [1e-2]},
            "dolgopyat_scan": {"varsigmas": [5.0], "seeds": 2, "n": 20},
            "uni": {"n": 4}
        }"#,
    );
    let out = dir.path().join("out");
    let names = [
        "simulate",
        "spectrum",
        "average",
        "variance",
        "rate-table",
        "path-rate",
        "domain",
        "pairs",
        "mgf",
        "llt",
        "ldp-probe",
        "dolgopyat-scan",
        "uni",
    ];
    for cmd in names {
        let o = fastslow(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let rows = read_rows(&out.join(format!("{cmd}.csv")));
        assert!(!rows.is_empty(), "{cmd} wrote no rows");
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(format!("{cmd}.json"))).unwrap()).unwrap();
        assert_eq!(manifest["rows"].as_u64().unwrap() as usize, rows.len());
        assert_eq!(manifest["config"]["t_end"], 0.1);
    }
}

#[test]
fn expression_system_reproduces_preset() {
    let dir = TempDir::new().unwrap();
    let preset = run_ok("spectrum", r#"{"spectrum": {"thetas": 4}}"#, &dir);
    let custom = run_ok(
        "spectrum",
        r#"{"system": {"preset": null, "f": "2*x", "omega": "cos(2*pi*x) + 0.5*sin(2*pi*theta)"},
            "spectrum": {"thetas": 4}}"#,
        &dir,
    );
    assert_eq!(preset.len(), custom.len());
    for (a, b) in preset.iter().zip(&custom) {
        for col in [1, 3, 7, 8] {
            assert!((num(a, col) - num(b, col)).abs() < 1e-10, "column {col}: {} vs {}", &a[col], &b[col]);
        }
    }
}

#[test]
fn floats_use_seventeen_significant_digits() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"t_end": 0.01}"#);
    let out = dir.path().join("out");
    assert!(fastslow(&["variance", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(out.join("variance.csv")).unwrap();
    let mut lines = text.split("\r\n");
    assert_eq!(lines.next(), Some("t,var_t"));
    let field = lines.next().unwrap().split(',').nth(1).unwrap().to_string();
    let mantissa = field.split('e').next().unwrap().replace(['-', '.'], "");
    assert_eq!(mantissa.len(), 17, "{field}");
}
