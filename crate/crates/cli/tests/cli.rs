use std::path::PathBuf;
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn vsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsl")).args(args).env("RUST_LOG", "warn").output().expect("run vsl")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn replaying_the_shipped_fixture_matches() {
    let fixture = fixtures().join("replay_fixture.jsonl");
    let policy = fixtures().join("policy.vslp");
    let out = stdout(&vsl(&["replay", "--fixture", fixture.to_str().unwrap(), "--policy", policy.to_str().unwrap()]));
    assert!(out.contains("replayed 120 ticks, 0 mismatched"), "{out}");
}

#[test]
fn scenario_simulate_report_render() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    stdout(&vsl(&[
        "scenario",
        "training",
        "--corridor-out",
        &p("c.toml"),
        "--scenario-out",
        &p("s.toml"),
        "--duration-s",
        "600",
    ]));
    let policy = fixtures().join("policy.vslp");
    let out = stdout(&vsl(&[
        "simulate",
        "--corridor",
        &p("c.toml"),
        "--scenario",
        &p("s.toml"),
        "--policy",
        policy.to_str().unwrap(),
        "--log",
        &p("run.jsonl"),
        "--command",
        r#"3:{"command":"override","gantry_ids":["T4"],"max_limit":40}"#,
    ]));
    assert!(out.contains("wrote 20 ticks"), "{out}");
    let report = stdout(&vsl(&["report", &p("run.jsonl")]));
    assert!(report.contains("days 1 decisions 160"), "{report}");
    stdout(&vsl(&["render", "--log", &p("run.jsonl"), "--out", &p("limits.csv")]));
    let csv = std::fs::read_to_string(p("limits.csv")).unwrap();
    assert!(csv.lines().count() > 1);
}

#[test]
fn wrong_policy_digest_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    stdout(&vsl(&["scenario", "training", "--corridor-out", &p("c.toml"), "--scenario-out", &p("s.toml")]));
    let policy = fixtures().join("policy.vslp");
    let out = vsl(&[
        "simulate",
        "--corridor",
        &p("c.toml"),
        "--scenario",
        &p("s.toml"),
        "--policy",
        policy.to_str().unwrap(),
        "--policy-sha256",
        "00",
        "--log",
        &p("run.jsonl"),
    ]);
    assert!(!out.status.success());
}
