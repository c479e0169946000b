use std::path::Path;
use std::process::{Command, Output};

fn slicing(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slicing"))
        .args(args)
        .output()
        .expect("spawn slicing")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn desk() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/desk.toml")
        .display()
        .to_string()
}

#[test]
fn actions_count_and_list() {
    let o = slicing(&[
        "actions", "--W", "10", "--delta", "0.2", "--N", "3", "--count",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "1176");
    let o = slicing(&["actions", "--W", "10", "--delta", "1", "--N", "3", "--list"]);
    let rows: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(rows.len(), 36);
    assert_eq!(rows[0], "1,1,8");
    assert_eq!(rows[35], "8,1,1");
}

#[test]
fn bad_arguments_exit_with_config_code() {
    assert_eq!(
        slicing(&["actions", "--W", "2", "--delta", "1", "--N", "3"])
            .status
            .code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x").display().to_string();
    let o = slicing(&[
        "train",
        "--config",
        &desk(),
        "--output",
        &out,
        "--agent.learnin_rate=0.1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learnin_rate"));
    assert_eq!(
        slicing(&["train", "--config", "/definitely/missing.toml"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        slicing(&[
            "actions",
            "--W",
            "10",
            "--delta",
            "1",
            "--N",
            "3",
            "--run.seed=2"
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn numeric_failure_exits_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x").display().to_string();
    let o = slicing(&[
        "train",
        "--config",
        &desk(),
        "--output",
        &out,
        "--episodes",
        "100",
        "--agent.learning_rate=1e200",
        "--agent.optimizer=sgd",
        "--agent.minibatch_size=4",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("episode"));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = slicing(&[
        "train",
        "--config",
        &desk(),
        "--output",
        out.to_str().unwrap(),
        "--episodes",
        "60",
        "--agent.hidden=[16]",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 61);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["episodes"], 60);
    assert_eq!(
        summary["config"]["agent"]["hidden"],
        serde_json::json!([16])
    );
    assert!(summary["final"]["mean_reward"].as_f64().unwrap() > 0.0);

    let eval_csv = dir.path().join("eval.csv");
    let o = slicing(&[
        "eval",
        "--checkpoint",
        out.join("checkpoint").to_str().unwrap(),
        "--config",
        &desk(),
        "--episodes",
        "5",
        "--csv",
        eval_csv.to_str().unwrap(),
        "--agent.hidden=[16]",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(eval_csv).unwrap().lines().count(),
        6
    );
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["window"], 5);

    // A checkpoint on a different grid is refused.
    let o = slicing(&[
        "eval",
        "--checkpoint",
        out.join("checkpoint").to_str().unwrap(),
        "--config",
        &desk(),
        "--grid.resolution_mhz=0.5",
        "--agent.hidden=[16]",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn concurrent_runs_get_seeded_subdirectories() {
    let dir = tempfile::tempdir().unwrap();
    let o = slicing(&[
        "train",
        "--config",
        &desk(),
        "--output",
        dir.path().to_str().unwrap(),
        "--episodes",
        "20",
        "--runs",
        "2",
        "--seed",
        "4",
        "--run.agent=equal",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in ["seed-4", "seed-5"] {
        assert!(dir.path().join(s).join("metrics.csv").exists());
        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(s).join("summary.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(summary["agent"], "equal");
    }
}

#[test]
fn traffic_stats_and_simulate() {
    let o = slicing(&["traffic-stats", "--slice", "volte", "-n", "20000"]);
    assert!(o.status.success());
    let rows: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(rows.len(), 3);
    let mean: f64 = rows[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((mean - 80.0).abs() < 2.0, "{mean}");
    assert_eq!(
        slicing(&["traffic-stats", "--slice", "nope"]).status.code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let o = slicing(&[
        "simulate",
        "--config",
        &desk(),
        "--allocation",
        "2,5,3",
        "--intervals",
        "2",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1 + 2 * 3);
    assert!(std::fs::read_to_string(trace).unwrap().lines().count() > 1);
    assert_eq!(
        slicing(&["simulate", "--config", &desk(), "--allocation", "2,2,2"])
            .status
            .code(),
        Some(2)
    );
}
