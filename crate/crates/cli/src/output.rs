use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use losnet_core::sim::{RunSummary, StepMetrics, StepTrace};
use serde::Serialize;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

pub const METRICS_HEADER: [&str; 9] = [
    "t",
    "d_min_robot",
    "d_min_obstacle",
    "d_avg_target",
    "lambda2",
    "perturbation",
    "solver_status",
    "tree_edge_count",
    "step_wall_time",
];

pub const AGGREGATE_STATS: [&str; 6] = [
    "step_wall_time",
    "perturbation",
    "min_lambda2",
    "min_d_robot",
    "min_d_obstacle",
    "final_d_avg_target",
];

pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(METRICS_HEADER)?;
    for m in metrics {
        w.write_record([
            m.t.to_string(),
            m.d_min_robot.to_string(),
            m.d_min_obstacle.to_string(),
            m.d_avg_target.to_string(),
            m.lambda2.to_string(),
            m.perturbation.to_string(),
            m.solver_status.as_str().to_string(),
            m.tree_edges.len().to_string(),
            m.step_wall_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses one numeric column of a metrics CSV.
pub fn read_metric_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| anyhow!("{} has no column {column}", path.display()))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec[idx]
                .parse::<f64>()
                .with_context(|| format!("{}: bad value `{}` in {column}", path.display(), &rec[idx]))
        })
        .collect()
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    t: usize,
    x: Vec<[f64; 2]>,
    u: Vec<[f64; 2]>,
    u_nominal: Vec<[f64; 2]>,
    tree: &'a [(usize, usize)],
}

fn pairs(v: &[losnet_core::geometry::Point]) -> Vec<[f64; 2]> {
    v.iter().map(|p| [p.x, p.y]).collect()
}

pub fn write_trajectory_jsonl(path: &Path, traces: &[StepTrace]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for tr in traces {
        let line = TrajectoryLine {
            t: tr.t,
            x: pairs(&tr.x),
            u: pairs(&tr.u),
            u_nominal: pairs(&tr.u_nominal),
            tree: &tr.tree,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    seed: u64,
    #[serde(flatten)]
    summary: &'a RunSummary,
}

pub fn write_summary_json(path: &Path, summary: &RunSummary, seed: u64) -> Result<()> {
    let text = serde_json::to_string_pretty(&SummaryFile { seed, summary })?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub n_robots: usize,
    pub trials: usize,
    pub disconnected_runs: usize,
    pub failed_runs: usize,
    /// (mean, std) of each statistic in [`AGGREGATE_STATS`] order.
    pub stats: [(f64, f64); 6],
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec![
        "n_robots".to_string(),
        "trials".into(),
        "disconnected_runs".into(),
        "failed_runs".into(),
    ];
    for s in AGGREGATE_STATS {
        header.push(format!("{s}_mean"));
        header.push(format!("{s}_std"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.n_robots.to_string(),
            r.trials.to_string(),
            r.disconnected_runs.to_string(),
            r.failed_runs.to_string(),
        ];
        for (m, s) in r.stats {
            rec.push(m.to_string());
            rec.push(s.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
