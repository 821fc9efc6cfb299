use std::path::Path;
use std::process::{Command, Output};

fn devslam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devslam")).args(args).output().expect("run devslam")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn plan_gen_simulate_run_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("env.json"),
        r#"{"seed": 4, "grid": [2, 2], "room_size_xy": [4.0, 4.0], "wall_width": 0.2,
            "deviations": [{"wall_id": "W1", "d_translation": 0.25, "d_yaw": 0.0}]}"#,
    )
    .unwrap();
    let world = d.join("world");
    let out = devslam(&["plan-gen", "--spec", p(&d.join("env.json")), "--out", p(&world)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = d.join("trace.txt");
    let out = devslam(&["simulate", "--world", p(&world), "--seed", "4", "--out", p(&trace)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let reports = d.join("reports");
    let csv = d.join("dev.csv");
    let out = devslam(&[
        "run",
        "--plan",
        p(&world.join("plan.json")),
        "--trace",
        p(&trace),
        "--report",
        p(&reports.join("full.json")),
        "--deviations-csv",
        p(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(reports.join("full.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 1);

    let summary = d.join("summary.csv");
    let out = devslam(&["eval", "--reports", p(&reports), "--summary", p(&summary)]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&summary).unwrap().lines().count(), 2);
}

#[test]
fn bad_input_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("plan.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = devslam(&["run", "--plan", p(&bad), "--trace", p(&bad), "--report", p(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(3));
    let out = devslam(&["simulate", "--world", p(dir.path()), "--out", p(&dir.path().join("t.txt"))]);
    assert_eq!(out.status.code(), Some(3));
}
