use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_restartlab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("RESTARTLAB_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn sequence_luby_prefix() {
    let o = run(&["sequence", "luby", "-n", "7"]);
    assert!(o.status.success());
    let cutoffs: Vec<String> = stdout(&o).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().to_string()).collect();
    assert_eq!(cutoffs, ["1", "1", "2", "1", "1", "2", "4"]);
}

#[test]
fn sequence_quantile_one_doubles() {
    let o = run(&["sequence", "quantile:1", "-n", "4"]);
    assert_eq!(stdout(&o), "k,cutoff\n0,1\n1,2\n2,4\n3,8\n");
}

#[test]
fn sequence_sprs_is_reproducible() {
    let a = run(&["sequence", "sprs", "-n", "10", "--seed", "11"]);
    let b = run(&["sequence", "sprs", "-n", "10", "--seed", "11"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("k,sub_index,cutoff\n"));
}

#[test]
fn malformed_strategy_exits_with_usage_code() {
    let o = run(&["sequence", "lubyy"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lubyy"));
    let o = run(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn oracle_reports_json() {
    let o = run(&["oracle", r#"{"family": "two_point", "atoms": [[1, 0.5], [100, 0.5]]}"#]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ellstar"], 2.0);
    assert_eq!(v["lstar"], 2.0);
    assert_eq!(v["qstar"], 0.5);
    assert_eq!(v["bound_values"]["sprs_23"], 46.0);
}

#[test]
fn oracle_reads_files_and_prints_infinity() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.json");
    fs::write(
        &p,
        r#"{"family": "mixture", "components": [{"family": "deterministic", "c": 1}], "weights": [0.1], "mass_at_infinity": 0.9}"#,
    )
    .unwrap();
    let o = run(&["oracle", p.to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mean"], "inf");
    assert_eq!(v["ellstar"], 10.0);
}

const CONFIG: &str = r#"{
    "distribution": {"family": "deterministic", "c": 5},
    "strategy": "sprs",
    "n_trials": 1000,
    "seed": 3,
    "bounds_to_check": ["sprs_23"]
}"#;

fn csv_rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

#[test]
fn simulate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(&p, CONFIG).unwrap();
    let o = run(&["simulate", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["bound"].parse::<f64>().unwrap(), 115.0);
    assert_eq!(rows[0]["bound_satisfied"], "true");
    assert_eq!(rows[0]["seed"], "3");
}

#[test]
fn seed_environment_override() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(&p, CONFIG).unwrap();
    let o = bin().args(["simulate", p.to_str().unwrap()]).env("RESTARTLAB_SEED", "99").output().unwrap();
    assert!(o.status.success());
    assert_eq!(csv_rows(&stdout(&o))[0]["seed"], "99");
}

#[test]
fn simulate_json_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    let out = dir.path().join("out.json");
    let cfg = r#"{"distribution": {"family": "two_point", "atoms": [[1, 0.5], [100, 0.5]]},
        "strategy": {"strategy": "constant", "alpha": 1},
        "output": {"path": "OUT", "format": "json"}}"#
        .replace("OUT", out.to_str().unwrap());
    fs::write(&p, cfg).unwrap();
    let o = run(&["simulate", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v[0]["mean_actual"], 2.0);
    assert_eq!(v[0]["method"], "exact");
}

#[test]
fn bad_config_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(&p, "{\n  \"distribution\": {\"family\": \"deterministic\", \"c\": 5},\n  \"strategy\": \"luby\",\n  \"bounds\": [\"sprs_24\"]\n}").unwrap();
    let o = run(&["simulate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    assert!(err.contains("sprs_24") && err.contains("sprs_23"), "{err}");
    fs::write(&p, "{\n  \"distribution\": {\"family\": \"deterministic\", \"c\": 5},\n  \"strategy\": 5\n}").unwrap();
    let o = run(&["simulate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn bounds_table_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(
        &p,
        r#"{"distribution": {"family": "deterministic", "c": 1024}, "bounds": ["ssprs_psi", "sprs_23", "quantile:1"]}"#,
    )
    .unwrap();
    let o = run(&["bounds", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&stdout(&o));
    let values: Vec<f64> = rows.iter().map(|r| r["value"].parse().unwrap()).collect();
    assert_eq!(values, [1024.0, 23552.0, 4096.0]);
}

#[test]
fn wrap_passes_through_success() {
    let o = run(&["wrap", "--strategy", "constant:5", "--unit", "1", "--", "sh", "-c", "sleep 0.2; echo done; exit 0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "done\n");
}

#[test]
fn wrap_exhaustion_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let o = run(&[
        "wrap",
        "--strategy",
        "luby",
        "--unit",
        "0.05",
        "--max-attempts",
        "3",
        "--report",
        report.to_str().unwrap(),
        "--",
        "sleep",
        "100",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let attempts = v["attempts"].as_array().unwrap();
    assert_eq!(attempts.len(), 3);
    assert!(attempts.iter().all(|a| a["outcome"] == "killed"));
    assert_eq!(v["exit_status"], Value::Null);
}

#[test]
fn wrap_coin_flip_needs_about_two_attempts() {
    // exits after 0.1s with probability 1/2, otherwise hangs
    let script = r#"if [ $(od -An -N1 -tu1 /dev/urandom) -lt 128 ]; then sleep 0.1; exit 0; else exec sleep 100; fi"#;
    let dir = tempfile::tempdir().unwrap();
    let mut total = 0usize;
    let runs = 50;
    for i in 0..runs {
        let report = dir.path().join(format!("r{i}.json"));
        let o = run(&[
            "wrap",
            "--strategy",
            "constant:2",
            "--unit",
            "0.1",
            "--max-attempts",
            "50",
            "--report",
            report.to_str().unwrap(),
            "--",
            "sh",
            "-c",
            script,
        ]);
        assert_eq!(o.status.code(), Some(0));
        let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        total += v["attempts"].as_array().unwrap().len();
    }
    let mean = total as f64 / runs as f64;
    assert!((1.0..=4.0).contains(&mean), "mean attempts {mean}");
}

#[test]
fn wrap_rejects_missing_command() {
    let o = run(&["wrap", "--strategy", "luby", "--unit", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
}
