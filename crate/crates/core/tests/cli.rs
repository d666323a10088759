use std::process::Command;

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_mqtt-testbed");

fn scenario(dir: &TempDir, body: &str) -> std::path::PathBuf {
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> (i32, String) {
    let mut cmd = Command::new(BIN);
    cmd.args(args)
        .env_remove("TESTBED_ENDPOINT")
        .env_remove("TESTBED_PORT")
        .env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

const SMALL: &str = r#"{"total_messages": 300, "num_batches": 3, "inter_batch_sleep_ms": 10, "workers": 3,
    "verifier": {"settle_ms": 100}}"#;

#[test]
fn passing_run_exits_zero_and_report_rerenders() {
    let dir = TempDir::new().unwrap();
    let s = scenario(&dir, SMALL);
    let json = dir.path().join("out.json");
    let (code, stdout) = run(
        &[
            "bench",
            "run",
            s.to_str().unwrap(),
            "--json",
            json.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("Messages per second"));
    let (code, csv) = run(&["report", json.to_str().unwrap(), "--format", "csv"], &[]);
    assert_eq!(code, 0);
    assert!(csv.starts_with("repetition,scenario,Messages per second"));
    let svg = dir.path().join("plot.svg");
    let (code, _) = run(
        &[
            "report",
            json.to_str().unwrap(),
            "--format",
            "svg",
            "--output",
            svg.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code, 0);
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn failed_threshold_exits_one() {
    let dir = TempDir::new().unwrap();
    let body = SMALL.replace(
        "\"workers\": 3,",
        "\"workers\": 3, \"thresholds\": {\"max_duration_ms\": 0.001},",
    );
    let s = scenario(&dir, &body);
    let (code, stdout) = run(&["bench", "run", s.to_str().unwrap()], &[]);
    assert_eq!(code, 1, "{stdout}");
    assert!(stdout.contains("FAIL"));
}

#[test]
fn bad_input_exits_two() {
    let dir = TempDir::new().unwrap();
    let s = scenario(
        &dir,
        r#"{"total_messages": 0, "num_batches": 1, "inter_batch_sleep_ms": 0, "workers": 1}"#,
    );
    assert_eq!(run(&["bench", "run", s.to_str().unwrap()], &[]).0, 2);
    assert_eq!(
        run(&["bench", "run", "/nonexistent/scenario.json"], &[]).0,
        2
    );
    assert_eq!(run(&["nonsense"], &[]).0, 2);
    assert_eq!(run(&["report", s.to_str().unwrap()], &[]).0, 2);
}

#[test]
fn unreachable_endpoint_exits_three() {
    let dir = TempDir::new().unwrap();
    let s = scenario(&dir, SMALL);
    let (code, _) = run(
        &["bench", "run", s.to_str().unwrap()],
        &[("TESTBED_ENDPOINT", "127.0.0.1:1")],
    );
    assert_eq!(code, 3);
}
