use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evcdr::harness::{read_rows, Format, CSV_HEADER};

const CONFIG: &str = r#"
seed = 11
variants = ["standard", "purity_normalized"]

[model]
lattice = { kind = "ring", n = 4 }
j = 1.0
h = 1.5

[plan]
steps = 2
tau = 0.3
site = 0

[noise]
kind = "depolarizing"
p1 = 0.002
p2 = 0.01

[shots]
per_step = 6000
trajectories = 8
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evcdr"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn evcdr")
}

#[test]
fn validate_reports_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.toml", CONFIG);
    let out = run(bin().arg("validate").arg(&cfg));
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("ok (4 sites, 4 edges, 2 steps"), "{stdout}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &CONFIG.replace("steps = 2", "steps = 0"));
    let out = run(bin().arg("validate").arg(&bad));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plan.steps"));

    let unknown = write_config(dir.path(), "unknown.toml", &format!("{CONFIG}\nbogus = 1\n"));
    assert_eq!(run(bin().arg("run").arg(&unknown)).status.code(), Some(2));

    assert_eq!(run(bin().arg("frobnicate")).status.code(), Some(2));
}

#[test]
fn io_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CONFIG);
    let out = run(bin().arg("run").arg(&cfg).args(["-o", "/nonexistent/dir/out.csv"]));
    assert_eq!(out.status.code(), Some(3));
    // An unreadable config is reported as a config error.
    assert_eq!(run(bin().arg("run").arg("/nonexistent/config.toml")).status.code(), Some(2));
}

#[test]
fn run_writes_csv_and_seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CONFIG);
    let paths: Vec<PathBuf> = ["a.csv", "b.csv", "c.csv"].iter().map(|n| dir.path().join(n)).collect();
    assert!(run(bin().arg("run").arg(&cfg).arg("-o").arg(&paths[0])).status.success());
    assert!(run(bin().arg("run").arg(&cfg).arg("-o").arg(&paths[1])).status.success());
    assert!(run(bin().args(["run", "-s", "12"]).arg(&cfg).arg("-o").arg(&paths[2])).status.success());

    let a = std::fs::read_to_string(&paths[0]).unwrap();
    assert_eq!(a.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(a, std::fs::read_to_string(&paths[1]).unwrap());
    assert_ne!(a, std::fs::read_to_string(&paths[2]).unwrap());

    let rows = read_rows(a.as_bytes(), Format::Csv).unwrap();
    // exact + two estimators, two steps.
    assert_eq!(rows.len(), 6);
}

#[test]
fn json_to_stdout_and_threads_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CONFIG);
    let single = run(bin().env("EVCDR_THREADS", "1").args(["run", "-f", "json"]).arg(&cfg));
    assert!(single.status.success());
    let rows = read_rows(single.stdout.as_slice(), Format::Json).unwrap();
    assert_eq!(rows.len(), 6);
    let multi = run(bin().env("EVCDR_THREADS", "3").args(["run", "-f", "json"]).arg(&cfg));
    assert_eq!(single.stdout, multi.stdout);

    let bad = run(bin().env("EVCDR_THREADS", "zero").arg("validate").arg(&cfg));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn oracle_emits_reference_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CONFIG);
    let out_path = dir.path().join("oracle.json");
    assert!(run(bin().arg("oracle").arg(&cfg).arg("-o").arg(&out_path)).status.success());
    let rows = read_rows(std::fs::File::open(&out_path).unwrap(), Format::Json).unwrap();
    assert!(rows.iter().any(|r| r.variant == "trotter"));
    assert!(rows.iter().all(|r| r.t > 0.0));
}
