use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmprof_core::fixtures::trace_a;
use cmprof_core::trace::write_trace;
use tempfile::TempDir;

fn cmprof(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmprof"))
        .args(args)
        .current_dir(dir)
        .env_remove("CMPROF_LOG")
        .output()
        .expect("run cmprof")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_trace_a(dir: &Path) -> PathBuf {
    let path = dir.join("traceA.jsonl");
    let mut buf = Vec::new();
    write_trace(&mut buf, &trace_a()).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

fn synth(dir: &Path, args: &[&str]) {
    let out = cmprof(args, dir);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn oracle_prints_trace_a() {
    let dir = TempDir::new().unwrap();
    write_trace_a(dir.path());
    let out = cmprof(&["oracle", "traceA.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "1: 175ns, 2: 100ns\n");

    let out = cmprof(&["oracle", "traceA.jsonl", "--check"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn oracle_rejects_corrupt_trace() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("corrupt.jsonl"),
        "{\"ev\":\"switch\",\"ts\":5,\"prev\":1}\n",
    )
    .unwrap();
    let out = cmprof(&["oracle", "corrupt.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("missing field \"next\""),
        "{}",
        stderr(&out)
    );
}

#[test]
fn synth_writes_three_deterministic_files() {
    let dir = TempDir::new().unwrap();
    synth(
        dir.path(),
        &[
            "synth",
            "serial",
            "--threads",
            "4",
            "--seed",
            "1",
            "--out",
            "a",
        ],
    );
    synth(
        dir.path(),
        &[
            "synth",
            "serial",
            "--threads",
            "4",
            "--seed",
            "1",
            "--out",
            "b",
        ],
    );
    for ext in [".jsonl", ".sym", ".truth.json"] {
        let a = fs::read(dir.path().join(format!("a{ext}"))).unwrap();
        let b = fs::read(dir.path().join(format!("b{ext}"))).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{ext} differs");
    }
    let trace = fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    assert!(trace.starts_with("#cmprof-trace v1\n"));
}

#[test]
fn synth_rejects_invalid_scenarios() {
    let dir = TempDir::new().unwrap();
    let out = cmprof(
        &["synth", "serial", "--threads", "0", "--out", "x"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let out = cmprof(
        &["synth", "pipeline", "--stages", "1,0,1", "--out", "x"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x.jsonl").exists());
}

#[test]
fn synth_pipeline_with_dedup_stages() {
    let dir = TempDir::new().unwrap();
    synth(
        dir.path(),
        &[
            "synth",
            "pipeline",
            "--stages",
            "1,20,20,20,1",
            "--items",
            "40",
            "--out",
            "dedup",
        ],
    );
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("dedup.truth.json")).unwrap())
            .unwrap();
    assert_eq!(truth["scenario"]["threads"], 62);
    let out = cmprof(&["oracle", "dedup.jsonl", "--check"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn analyze_serial_ranks_serial_function_first() {
    let dir = TempDir::new().unwrap();
    synth(
        dir.path(),
        &[
            "synth",
            "serial",
            "--threads",
            "4",
            "--seed",
            "1",
            "--out",
            "serial",
        ],
    );
    let out = cmprof(
        &[
            "analyze",
            "serial.jsonl",
            "--symbols",
            "serial.sym",
            "--nmin",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("Critical Path 1:"));
    assert_eq!(lines.next(), Some("CMetric: 425000 ns over 1 timeslices"));
    assert_eq!(lines.next(), Some(""));
    assert!(lines.next().unwrap().starts_with("serial_work()"));
    assert!(text.contains("CR: 0.2500 (25.00%)"));
}

#[test]
fn analyze_balanced_reports_no_critical_slices() {
    let dir = TempDir::new().unwrap();
    synth(
        dir.path(),
        &["synth", "balanced", "--threads", "4", "--out", "balanced"],
    );
    let out = cmprof(&["analyze", "balanced.jsonl", "--nmin-half"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(
        text.contains("4 timeslices, 0 critical timeslices"),
        "{text}"
    );
    assert!(text.contains("CR: 0.0000 (0.00%)"));
    assert!(text.contains("tid 4 -- 25000 ns"));
}

#[test]
fn analyze_errors_and_flags() {
    let dir = TempDir::new().unwrap();
    let out = cmprof(&["analyze", "missing.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cannot open trace"));

    write_trace_a(dir.path());
    for bad in [
        &["analyze", "traceA.jsonl", "--nmin", "0"][..],
        &["analyze", "traceA.jsonl", "--nmin", "2", "--nmin-half"],
        &["analyze", "traceA.jsonl", "--format", "xml"],
        &["analyze", "traceA.jsonl", "--stack-depth", "0"],
        &["analyze", "traceA.jsonl", "--bogus"],
    ] {
        assert_eq!(cmprof(bad, dir.path()).status.code(), Some(2), "{bad:?}");
    }

    // switch-out of a thread that never ran
    fs::write(
        dir.path().join("bad.jsonl"),
        "{\"ev\":\"new\",\"ts\":0,\"tid\":1,\"comm\":\"a\"}\n\
         {\"ev\":\"switch\",\"ts\":1,\"cpu\":0,\"prev\":1,\"prev_state\":\"B\",\"next\":0}\n",
    )
    .unwrap();
    let out = cmprof(&["analyze", "bad.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("event 1"), "{}", stderr(&out));
}

#[test]
fn analyze_writes_out_file() {
    let dir = TempDir::new().unwrap();
    write_trace_a(dir.path());
    let out = cmprof(
        &["analyze", "traceA.jsonl", "--nmin", "2", "--out", "r.txt"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = fs::read_to_string(dir.path().join("r.txt")).unwrap();
    assert!(
        text.contains("3 timeslices, 1 critical timeslices"),
        "{text}"
    );
}

#[test]
fn analyze_is_deterministic() {
    let dir = TempDir::new().unwrap();
    synth(
        dir.path(),
        &[
            "synth",
            "convoy",
            "--threads",
            "8",
            "--cpus",
            "4",
            "--work-ns",
            "20000",
            "--rounds",
            "10",
            "--sample-period-ns",
            "2000",
            "--seed",
            "3",
            "--out",
            "cv",
        ],
    );
    for format in ["text", "json"] {
        let args = [
            "analyze",
            "cv.jsonl",
            "--symbols",
            "cv.sym",
            "--nmin",
            "4",
            "--format",
            format,
        ];
        let a = cmprof(&args, dir.path());
        let b = cmprof(&args, dir.path());
        assert_eq!(a.status.code(), Some(0));
        assert_eq!(a.stdout, b.stdout, "{format}");
    }
}

#[test]
fn json_report_matches_schema() {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/report.schema.json");
    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();

    let dir = TempDir::new().unwrap();
    synth(
        dir.path(),
        &[
            "synth",
            "convoy",
            "--threads",
            "6",
            "--cpus",
            "3",
            "--work-ns",
            "5000",
            "--sample-period-ns",
            "3000",
            "--out",
            "cv",
        ],
    );
    synth(dir.path(), &["synth", "balanced", "--out", "bal"]);
    write_trace_a(dir.path());
    let runs: [&[&str]; 4] = [
        &[
            "analyze",
            "cv.jsonl",
            "--symbols",
            "cv.sym",
            "--nmin",
            "2",
            "--format",
            "json",
        ],
        &["analyze", "cv.jsonl", "--nmin", "3", "--format", "json"],
        &["analyze", "bal.jsonl", "--format", "json"],
        &["analyze", "traceA.jsonl", "--nmin", "3", "--format", "json"],
    ];
    for args in runs {
        let out = cmprof(args, dir.path());
        assert_eq!(out.status.code(), Some(0));
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let errors: Vec<String> = validator
            .iter_errors(&report)
            .map(|e| e.to_string())
            .collect();
        assert!(errors.is_empty(), "{args:?}: {errors:?}");

        let mut broken = report.clone();
        broken["summary"]["cr"] = serde_json::json!("high");
        assert!(!validator.is_valid(&broken));
    }
}

#[test]
fn log_level_from_environment() {
    let dir = TempDir::new().unwrap();
    write_trace_a(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_cmprof"))
        .args(["analyze", "traceA.jsonl"])
        .current_dir(dir.path())
        .env("CMPROF_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stderr(&out).contains("3 timeslices"), "{}", stderr(&out));
    assert!(cmprof(&["analyze", "traceA.jsonl"], dir.path())
        .stderr
        .is_empty());
}
