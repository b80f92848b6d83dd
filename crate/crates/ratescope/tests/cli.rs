use std::io::Write;
use std::process::{Command, Output};

use ratescope::live::{process_snapshot, MonitorEvent};
use ratescope::trace::{self, TraceBody, TraceRecord};
use ratescope_core::ique::TransactionSnapshot;
use ratescope_core::monitor::{MonitorConfig, RateHeuristic};

fn ratescope(args: &[&str]) -> Output {
    ratescope_env(args, &[])
}

fn ratescope_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ratescope"));
    cmd.args(args).env_remove("RATE_SCOPE_TIMEREF");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synthetic_trace() -> Vec<TraceRecord> {
    let cfg = MonitorConfig::default();
    let mut h = RateHeuristic::new(cfg.clone(), 1_000, 8).unwrap();
    let mut recs = vec![TraceRecord::config("t", cfg, 1_000, 8)];
    for i in 0..400u64 {
        let s = TransactionSnapshot {
            period_index: i,
            tc_head: 40 + i * 7919 % 5,
            tc_tail: 40,
            head_blocked: false,
            tail_blocked: false,
            realized_period_ns: 1_000,
            timestamp_ns: (i + 1) * 1_000,
        };
        process_snapshot(&mut h, &s, &mut |e: MonitorEvent| recs.extend(TraceRecord::from_event("t", &e)));
    }
    recs
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(ratescope(&[]).status.code(), Some(2));
    assert_eq!(ratescope(&["calibrate"]).status.code(), Some(2));
    assert_eq!(ratescope(&["bench", "--consumer-rate", "1e5", "--repeats", "0"]).status.code(), Some(2));
    assert_eq!(ratescope(&["bench"]).status.code(), Some(2));
    assert_eq!(ratescope(&["model", "--mu", "1", "--format", "xml"]).status.code(), Some(2));
    let bad_env = ratescope_env(&["model", "--mu", "1"], &[("RATE_SCOPE_TIMEREF", "sundial")]);
    assert_eq!(bad_env.status.code(), Some(2));
}

#[test]
fn bad_config_file_is_a_usage_error() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, r#"{{"window": 1}}"#).unwrap();
    let o = ratescope(&["--config", f.path().to_str().unwrap(), "model", "--mu", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ratescope(&["--config", "/nonexistent/cfg.json", "model", "--mu", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_on_virtual_clock_is_stable() {
    let o = ratescope_env(&["calibrate", "--samples", "1000"], &[("RATE_SCOPE_TIMEREF", "virtual")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["stable"], true);
    let t = v["chosen_T_ns"].as_u64().unwrap();
    let floor = v["floor_ns"].as_u64().unwrap();
    assert!(t >= floor && t <= 100_000_000);
}

#[test]
fn calibrate_with_zero_tolerance_fails_at_runtime() {
    let o = ratescope_env(
        &["calibrate", "--samples", "100", "--epsilon", "0", "--ceiling-ns", "1000000"],
        &[("RATE_SCOPE_TIMEREF", "virtual")],
    );
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["stable"], false);
}

#[test]
fn model_table() {
    let o = ratescope(&["model", "--mu", "1000", "--rho", "0.5", "--capacity", "2,64", "--period-s", "0.003"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "T,rho,C,pr_read,pr_write");
    assert_eq!(lines[1], "0.003,0.5,2,0.125,0");
    let last: Vec<f64> = lines[2].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(last[2], 64.0);
    assert!((last[4] - (1.0 - 0.5f64.powi(62))).abs() < 1e-15);
}

#[test]
fn model_with_empty_sweep_prints_header_only() {
    let o = ratescope(&["model", "--mu", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "T,rho,C,pr_read,pr_write\n");
}

#[test]
fn replay_of_empty_trace_is_clean() {
    let f = tempfile::NamedTempFile::new().unwrap();
    let o = ratescope(&["replay", f.path().to_str().unwrap(), "--check"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
    let o = ratescope(&["--format", "csv", "replay", f.path().to_str().unwrap()]);
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn replay_names_the_broken_line() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    let recs = synthetic_trace();
    trace::write_trace(&mut f, &recs[..2]).unwrap();
    write!(f, r#"{{"run_id":"t","period_"#).unwrap();
    let o = ratescope(&["replay", f.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn replay_check_detects_tampering() {
    let recs = synthetic_trace();
    assert!(recs.iter().any(|r| matches!(r.body, TraceBody::Estimate { .. })));
    let mut f = tempfile::NamedTempFile::new().unwrap();
    trace::write_trace(&mut f, &recs).unwrap();
    let path = f.path().to_str().unwrap();
    assert_eq!(ratescope(&["replay", path, "--check"]).status.code(), Some(0));

    let csv = stdout(&ratescope(&["--format", "csv", "replay", path]));
    let estimates = recs.iter().filter(|r| matches!(r.body, TraceBody::Estimate { .. })).count();
    assert_eq!(csv.lines().count(), 1 + estimates);

    let mut tampered = recs.clone();
    let q = tampered.iter_mut().find_map(|r| match &mut r.body {
        TraceBody::Q { value } => Some(value),
        _ => None,
    });
    *q.unwrap() += 1e-9;
    let mut g = tempfile::NamedTempFile::new().unwrap();
    trace::write_trace(&mut g, &tampered).unwrap();
    assert_eq!(ratescope(&["replay", g.path().to_str().unwrap(), "--check"]).status.code(), Some(1));
}

#[test]
fn bench_trace_replays_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let report = dir.path().join("r.json");
    let o = ratescope_env(
        &[
            "--seed", "3", "--out", report.to_str().unwrap(),
            "bench", "--consumer-rate", "1e5", "--duration-s", "0.2", "--truth-items", "0",
            "--period-ns", "100000", "--trace", trace.to_str().unwrap(),
        ],
        &[("RATE_SCOPE_TIMEREF", "virtual")],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&report).unwrap().trim()).unwrap();
    assert_eq!(v["in_order"], true);
    assert_eq!(v["items_consumed"], 20_000);
    assert_eq!(ratescope(&["replay", trace.to_str().unwrap(), "--check"]).status.code(), Some(0));
}
