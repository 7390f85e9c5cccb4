use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "clients": 2,
  "rounds": 2,
  "warmup": 1,
  "local_epochs": 1,
  "train_samples": 96,
  "test_samples": 32,
  "reference_samples": 8,
  "image_shape": [3, 16, 16],
  "strategies": ["standard", "random", "proposed"],
  "pruning_rates": [0.1, 0.2, 0.3, 0.4]
}"#;

fn fpsim(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fpsim"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("FPSIM_THREADS", t),
        None => cmd.env_remove("FPSIM_THREADS"),
    };
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_config(dir: &Path, cfg: &str, out: &str, extra: &[&str], threads: Option<&str>) -> String {
    let outdir = dir.join(out);
    let mut args = vec!["run", cfg, "--outdir", outdir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = fpsim(&args, threads);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read_to_string(outdir.join("records.csv")).unwrap()
}

#[test]
fn validate_prints_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"seed": 5}"#);
    let o = fpsim(&["validate", &cfg], None);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("\"seed\": 5"));
    assert!(text.contains("\"rounds\": 20"));
    assert!(text.contains("\"warmup\": 9"));
}

#[test]
fn invalid_config_exits_with_two_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("{\n  \"rounds\": 4,\n  \"colour\": 1\n}", "line 3"),
        ("{\n  \"rounds\": 4,\n  \"warmup\": 6\n}", "line 3"),
        ("{\n  \"pruning_rates\": [1.0]\n}", "line 2"),
        ("{\n  \"clients\": 0\n}", "line 2"),
        ("{\n  \"rounds\": \n}", "line 3"),
    ];
    for (i, (text, line)) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("bad{i}.json"), text);
        for cmd in ["validate", "run"] {
            let mut args = vec![cmd, cfg.as_str()];
            if cmd == "run" {
                args.extend(["--outdir", "unused"]);
            }
            let o = fpsim(&args, None);
            assert_eq!(o.status.code(), Some(2), "{text}");
            let err = String::from_utf8_lossy(&o.stderr);
            assert!(err.contains(line), "{err}");
        }
    }
}

#[test]
fn missing_config_is_a_runtime_error() {
    let o = fpsim(&["validate", "/nonexistent/c.json"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn single_round_standard_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"strategies": ["standard"], "rounds": 1, "warmup": 1, "clients": 2, "train_samples": 64,
            "test_samples": 16, "reference_samples": 4, "image_shape": [3, 16, 16], "local_epochs": 1}"#,
    );
    let records = run_config(dir.path(), &cfg, "out", &[], None);
    let lines: Vec<&str> = records.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "round,strategy,q,map,uplink_bytes,downlink_bytes,pruned_fraction,wall_ms");
    assert!(lines[1].starts_with("1,standard,0,"));
    let out = dir.path().join("out");
    assert!(std::fs::read_to_string(out.join("map_vs_round.svg")).unwrap().contains("<polyline"));
    assert!(out.join("cells/standard.fpnn").exists());
}

#[test]
fn sweep_fills_summary_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", TINY);
    let records = run_config(dir.path(), &cfg, "out", &[], None);
    assert_eq!(records.lines().count(), 1 + 9 * 2);
    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["strategy", "0", "0.1", "0.2", "0.3", "0.4"]);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["strategy", "standard", "random", "proposed"]);
    let filled = rows[1..].iter().flat_map(|r| &r[1..]).filter(|c| **c != "-").count();
    assert_eq!(filled, 9);
    for r in &rows[2..] {
        assert_eq!(r[1], "-");
    }
}

#[test]
fn records_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", TINY);
    let a = run_config(dir.path(), &cfg, "a", &[], Some("1"));
    let b = run_config(dir.path(), &cfg, "b", &[], Some("1"));
    let c = run_config(dir.path(), &cfg, "c", &["--parallel"], Some("3"));
    assert_eq!(a, b);
    assert_eq!(a, c);
    let d = run_config(dir.path(), &cfg, "d", &["--seed", "99"], None);
    assert_ne!(a, d);
}
