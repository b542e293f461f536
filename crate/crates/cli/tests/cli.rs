use std::path::{Path, PathBuf};
use std::process::Command;

use losnet_cli::{
    aggregate, load_scenario, read_metric_column, run_to_dir, sweep, SweepConfig, METRICS_FILE, SUMMARY_FILE,
    TRAJECTORY_FILE,
};
use losnet_core::scenario::Method;

fn repo_scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn losnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_losnet"))
        .args(args)
        .output()
        .expect("spawn losnet")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// Drops the wall-time column, the only nondeterministic output.
fn without_wall_time(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

#[test]
fn run_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = losnet(&[
        "run",
        "--scenario",
        repo_scenario("minimal_pair.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [METRICS_FILE, TRAJECTORY_FILE, SUMMARY_FILE] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let metrics = read(&out.join(METRICS_FILE));
    assert_eq!(
        metrics.lines().next().unwrap(),
        "t,d_min_robot,d_min_obstacle,d_avg_target,lambda2,perturbation,solver_status,tree_edge_count,step_wall_time"
    );
    assert_eq!(metrics.lines().count(), 201);
    let traj = read(&out.join(TRAJECTORY_FILE));
    assert_eq!(traj.lines().count(), 200);
    let first: serde_json::Value = serde_json::from_str(traj.lines().next().unwrap()).unwrap();
    for key in ["t", "x", "u", "u_nominal", "tree"] {
        assert!(first.get(key).is_some(), "trajectory line lacks {key}");
    }
    let summary: serde_json::Value = serde_json::from_str(&read(&out.join(SUMMARY_FILE))).unwrap();
    assert_eq!(summary["method"], "mlccst");
    assert_eq!(summary["steps_completed"], 200);
}

#[test]
fn repeated_runs_match_except_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = load_scenario(&repo_scenario("corner_pair.json")).unwrap();
    s.steps = 300;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_to_dir(&s, &a).unwrap();
    run_to_dir(&s, &b).unwrap();
    assert_eq!(read(&a.join(TRAJECTORY_FILE)), read(&b.join(TRAJECTORY_FILE)));
    assert_eq!(
        without_wall_time(&read(&a.join(METRICS_FILE))),
        without_wall_time(&read(&b.join(METRICS_FILE)))
    );
}

#[test]
fn sweep_writes_every_run_and_a_consistent_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let template = load_scenario(&repo_scenario("fig1_walls_40.json")).unwrap();
    let config = SweepConfig {
        sizes: vec![4, 8],
        trials: 2,
        seed_base: 11,
        jobs: 2,
        method: None,
        steps: Some(15),
    };
    let runs = sweep(&template, &config, dir.path()).unwrap();
    assert_eq!(runs.len(), 4);
    for r in &runs {
        assert_eq!(r.summary.n_robots, r.n_robots);
        assert!(r.dir.join(METRICS_FILE).is_file());
        assert!(r.dir.join("scenario.json").is_file());
    }

    let mut reader = csv::Reader::from_path(dir.path().join("aggregate.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let expected = aggregate(&runs).unwrap();
    for (row, exp) in rows.iter().zip(&expected) {
        assert_eq!(row[0].parse::<usize>().unwrap(), exp.n_robots);
        // Recompute the perturbation mean straight from the per-run CSVs.
        let per_run: Vec<f64> = runs
            .iter()
            .filter(|r| r.n_robots == exp.n_robots)
            .map(|r| {
                let v = read_metric_column(&r.dir.join(METRICS_FILE), "perturbation").unwrap();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        let mean = per_run.iter().sum::<f64>() / per_run.len() as f64;
        let col = header.iter().position(|h| h == "perturbation_mean").unwrap();
        let written: f64 = row[col].parse().unwrap();
        assert!((written - mean).abs() <= 1e-12 * mean.abs().max(1.0));
    }
}

#[test]
fn validate_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{
            "robots": [{"pos": [0.0, 0.0], "subgroup": 1}, {"pos": [0.01, 0.0], "subgroup": 1}],
            "params": {"R_s": 0.04, "gamma": -1.0}
        }"#,
    )
    .unwrap();
    let o = losnet(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("gamma"), "{err}");
    assert!(err.contains("0 and 1") || err.contains("robots 0"), "{err}");

    std::fs::write(&path, r#"{"robots": [{"pos": [0.0, 0.0], "subgroup": 1, "colour": 3}]}"#).unwrap();
    let o = losnet(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let o = losnet(&["validate", "--scenario", repo_scenario("fig1_walls_40.json").to_str().unwrap()]);
    assert!(o.status.success());
}

#[test]
fn baseline_disconnection_is_reported_not_failed() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = load_scenario(&repo_scenario("fig1_walls_40.json")).unwrap();
    s.method = Method::Mccst;
    s.steps = 120;
    let summary = run_to_dir(&s, dir.path()).unwrap();
    assert!(summary.disconnected);
    assert!(summary.invariants_hold(), "{:?}", summary.violations);

    let o = losnet(&[
        "run",
        "--scenario",
        repo_scenario("fig1_walls_40.json").to_str().unwrap(),
        "--out",
        dir.path().join("cli").to_str().unwrap(),
        "--method",
        "mccst",
        "--steps",
        "120",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("cli").join(SUMMARY_FILE))).unwrap();
    assert_eq!(summary["disconnected"], true);
}
