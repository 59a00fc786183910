//! End-to-end tests of the binary: exit codes, report shape, and
//! determinism.

use std::path::Path;
use std::process::{Command, Output};

use priordiv::conflict::CheckReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_priordiv"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

fn write_scalar_csv(dir: &Path, name: &str, values: &[f64]) -> String {
    let mut text = String::from("y\n");
    for v in values {
        text.push_str(&format!("{v}\n"));
    }
    let path = dir.join(name);
    std::fs::write(&path, text).expect("fixture write");
    path.to_str().expect("utf8 path").to_string()
}

/// Drop the timestamp line so byte comparisons see only the payload.
fn strip_timestamp(json: &str) -> String {
    json.lines()
        .filter(|l| !l.trim_start().starts_with("\"timestamp\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn check_succeeds_and_prints_four_decimal_summary() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = write_scalar_csv(dir.path(), "y.csv", &[2.0]);
    let out = run(&[
        "check",
        "--model",
        "normal-location",
        "--data",
        &data,
        "--M",
        "500",
        "--seed",
        "1",
        "--output",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let line = stdout(&out);
    assert!(line.starts_with("normal-location: p = 0."), "{line}");
    let p_text = line
        .split("p = ")
        .nth(1)
        .and_then(|s| s.split(' ').next())
        .expect("p field");
    assert_eq!(p_text.split('.').nth(1).expect("decimals").len(), 4);
    assert!(line.contains("(se 0."), "{line}");
}

#[test]
fn report_round_trips_through_serde() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = write_scalar_csv(dir.path(), "y.csv", &[1.5]);
    let path = dir.path().join("r.json");
    let out = run(&[
        "check",
        "--model",
        "normal-location",
        "--data",
        &data,
        "--M",
        "300",
        "--keep-replicates",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&path).expect("report exists");
    let value: serde_json::Value = serde_json::from_str(&text).expect("valid json");
    assert_eq!(value["schema_version"], 1);
    assert!(value["timestamp"].is_string());
    let report: CheckReport = serde_json::from_str(&text).expect("check fields parse");
    assert_eq!(report.replicates, 300);
    assert_eq!(
        report
            .replicate_discrepancies
            .as_ref()
            .expect("kept replicates")
            .len(),
        300
    );
    let back = serde_json::to_value(&report).expect("serializes");
    let reparsed: CheckReport = serde_json::from_value(back).expect("round trip");
    assert_eq!(report, reparsed);
}

#[test]
fn identical_runs_differ_only_in_timestamp() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = write_scalar_csv(dir.path(), "y.csv", &[0.3, -1.2, 2.2]);
    let mut payloads = Vec::new();
    for name in ["a.json", "b.json"] {
        let path = dir.path().join(name);
        let out = run(&[
            "check",
            "--model",
            "normal-location",
            "--set",
            "sigmasq=2.0",
            "--data",
            &data,
            "--order",
            "alpha:0.5",
            "--M",
            "400",
            "--seed",
            "9",
            "--output",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        payloads.push(strip_timestamp(
            &std::fs::read_to_string(&path).expect("report"),
        ));
    }
    assert_eq!(payloads[0], payloads[1]);
}

#[test]
fn malformed_order_is_a_usage_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = write_scalar_csv(dir.path(), "y.csv", &[1.0]);
    for bad in ["alpha:-2", "alpha:1", "renyi", "alpha:abc"] {
        let out = run(&[
            "check",
            "--model",
            "normal-location",
            "--data",
            &data,
            "--order",
            bad,
        ]);
        assert_eq!(out.status.code(), Some(2), "order {bad}");
        assert!(stderr(&out).starts_with("error:"), "order {bad}");
    }
}

#[test]
fn unknown_model_and_unknown_key_are_usage_errors() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = write_scalar_csv(dir.path(), "y.csv", &[1.0]);
    let out = run(&["check", "--model", "weibull", "--data", &data]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown model"));

    let out = run(&[
        "check",
        "--model",
        "binomial",
        "--set",
        "nu=3",
        "--data",
        &data,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("'nu'"), "{}", stderr(&out));
}

#[test]
fn missing_data_file_is_a_usage_error() {
    let out = run(&[
        "check",
        "--model",
        "normal-location",
        "--data",
        "/nonexistent/y.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_applies_and_set_overrides_it() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = write_scalar_csv(dir.path(), "y.csv", &[7.0]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, "{\"a\": 2.0, \"n\": 10}\n").expect("config write");

    // Config alone changes the enumeration result relative to defaults.
    let report = |extra: &[&str]| -> String {
        let path = dir.path().join("r.json");
        let mut args = vec!["check", "--model", "binomial", "--data", &data];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--order", "mr", "--output", path.to_str().unwrap()]);
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        strip_timestamp(&std::fs::read_to_string(&path).expect("report"))
    };
    let base = report(&[]);
    let with_cfg = report(&["--config", cfg.to_str().unwrap()]);
    assert_ne!(base, with_cfg);

    // --set a=1 on top of the config restores the default answer.
    let overridden = report(&["--config", cfg.to_str().unwrap(), "--set", "a=1"]);
    assert_eq!(base, overridden);

    // Unknown keys in the config file are rejected.
    std::fs::write(&cfg, "{\"qq\": 1.0}\n").expect("config write");
    let bad = run(&[
        "check",
        "--model",
        "binomial",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        &data,
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("'qq'"));
}

#[test]
fn binomial_enumeration_is_flagged_and_exact() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = write_scalar_csv(dir.path(), "y.csv", &[10.0]);
    let path = dir.path().join("r.json");
    let out = run(&[
        "check",
        "--model",
        "binomial",
        "--data",
        &data,
        "--order",
        "mr",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("(exact)"));
    assert!(stdout(&out).contains("[enumeration]"));
    let report: CheckReport =
        serde_json::from_str(&std::fs::read_to_string(&path).expect("report")).expect("parses");
    assert!((report.p_value - 2.0 / 11.0).abs() < 1e-12);
    assert_eq!(report.mc_std_error, None);
}

#[test]
fn curve_rejects_bad_nu_and_writes_csv() {
    let out = run(&["curve", "--nu", "1.0"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("curve.csv");
    let out = run(&[
        "curve",
        "--nu",
        "2",
        "--points",
        "10",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&path).expect("csv");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,p");
    assert_eq!(lines.len(), 11);
}

#[test]
fn hier_check_rejects_unit_flags_on_scalar_models() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = write_scalar_csv(dir.path(), "y.csv", &[1.0, 2.0, 3.0]);
    let out = run(&[
        "hier-check",
        "--model",
        "normal-nig",
        "--data",
        &data,
        "--all-units",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["hier-check", "--model", "normal-nig", "--data", &data, "--level", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn workers_zero_is_rejected() {
    let out = run(&["--workers", "0", "curve", "--nu", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reproduce_reports_missing_fixture() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = bin()
        .current_dir(dir.path())
        .args(["reproduce", "5", "--data-dir", "nowhere"])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing fixture"));
}
