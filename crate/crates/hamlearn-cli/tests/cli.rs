//! Exit codes and artifacts of the `hamlearn` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
master_seed = 3

[model]
kind = "explicit"
n_qubits = 2
frequency_khz = [40.0, -25.0]

[[model.edges]]
i = 0
j = 1
coupling_khz = 80.0

[plan]
kind = "chip"

[sim]
backend = "series"
noise = { mode = "none" }

[fit]
degrees_to_try = [7]

[grid]
t0 = 0.03
t_max = 0.3
n_points = 60
"#;

fn hamlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamlearn")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_then_recover() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let sim = hamlearn(&["simulate", "--config", &cfg, "--out", out]);
    assert_eq!(sim.status.code(), Some(0), "{}", stderr(&sim));
    let traces = fs::read_dir(dir.path().join("out/traces")).unwrap().count();
    assert_eq!(traces, 11);
    assert!(dir.path().join("out/plan.csv").exists());

    let rec = hamlearn(&["recover", "--config", &cfg, "--out", out, "--method", "interp"]);
    assert_eq!(rec.status.code(), Some(0), "{}", stderr(&rec));
    let mut reader = csv::Reader::from_path(dir.path().join("out/recovery.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["parameter", "true_value", "estimate", "abs_error", "method", "derivatives"]);
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let err: f64 = rec[3].parse().unwrap();
        assert!(err < 1e-6, "{rec:?}");
        rows += 1;
    }
    assert_eq!(rows, 4);
    assert!(dir.path().join("out/fits.json").exists());
}

#[test]
fn empty_plan_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("kind = \"chip\"\n", "kind = \"chip\"\ntargets = []\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = hamlearn(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn missing_trace_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = hamlearn(&["recover", "--config", &cfg, "--out", dir.path().join("none").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing trace"), "{}", stderr(&o));
}

#[test]
fn bad_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("n_points = 60", "n_points = 60\nbogus = 1");
    let cfg = write_config(dir.path(), &text);
    let o = hamlearn(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let line = text.lines().position(|l| l.starts_with("bogus")).unwrap() + 1;
    assert!(stderr(&o).contains(&format!("line {line}:")), "{}", stderr(&o));

    let text = SMALL.replace("t_max = 0.3", "t_max = 0.01");
    let cfg = write_config(dir.path(), &text);
    let o = hamlearn(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let line = text.lines().position(|l| l.starts_with("t_max")).unwrap() + 1;
    assert!(stderr(&o).contains(&format!("line {line}:")), "{}", stderr(&o));
}

#[test]
fn non_finite_trace_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(hamlearn(&["simulate", "--config", &cfg, "--out", out]).status.code(), Some(0));
    let victim = fs::read_dir(dir.path().join("out/traces")).unwrap().next().unwrap().unwrap().path();
    let text = fs::read_to_string(&victim).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[5].split(',').map(String::from).collect();
    cols[3] = "NaN".into();
    lines[5] = cols.join(",");
    fs::write(&victim, lines.join("\n") + "\n").unwrap();
    let o = hamlearn(&["recover", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn qubit_override_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = hamlearn(&["simulate", "--config", &cfg, "--qubits", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shadows_identity_channel() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        format!("{SMALL}\n[shadows]\nchannel = {{ kind = \"identity\" }}\npaulis_a = [\"X0\", \"Z1\"]\npaulis_b = [\"X0\", \"Z1\"]\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = hamlearn(&["shadows", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(out.join("overlaps.csv")).unwrap();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let expected = if rec[0] == rec[1] { 1.0 } else { 0.0 };
        let est: f64 = rec[2].parse().unwrap();
        assert!((est - expected).abs() <= 0.1, "{rec:?}");
    }
}
