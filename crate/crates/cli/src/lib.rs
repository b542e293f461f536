//! File-level driver around `losnet-core`: scenario loading, single runs,
//! team-size sweeps and the output writers.

pub mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use losnet_core::scenario::{generate_team, Method, Scenario};
use losnet_core::sim::{RunSummary, Simulator};

pub use output::{
    read_metric_column, write_aggregate_csv, write_metrics_csv, write_summary_json,
    write_trajectory_jsonl, AggregateRow, METRICS_FILE, SUMMARY_FILE, TRAJECTORY_FILE,
};

/// Reads, resolves and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

/// Options shared by single runs.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub method: Option<Method>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
}

impl RunOptions {
    pub fn apply(&self, scenario: &mut Scenario) {
        if let Some(m) = self.method {
            scenario.method = m;
        }
        if let Some(s) = self.seed {
            scenario.seed = s;
        }
        if let Some(n) = self.steps {
            scenario.steps = n;
        }
    }
}

/// Runs one scenario and writes its metrics CSV, trajectory JSONL and
/// summary JSON into `out`.
pub fn run_to_dir(scenario: &Scenario, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let sim = Simulator::new(scenario)?;
    let record = sim.run();
    write_metrics_csv(&out.join(METRICS_FILE), &record.metrics)?;
    write_trajectory_jsonl(&out.join(TRAJECTORY_FILE), &record.traces)?;
    write_summary_json(&out.join(SUMMARY_FILE), &record.summary, scenario.seed)?;
    let s = &record.summary;
    if s.disconnected {
        log::info!(
            "{}: line-of-sight graph disconnected at step {}",
            out.display(),
            s.first_disconnect_step.unwrap_or_default()
        );
    }
    Ok(record.summary)
}

/// Maps a finished run to a process exit code: 0 when every declared
/// invariant held, 1 otherwise.
pub fn exit_code(summary: &RunSummary) -> i32 {
    if summary.invariants_hold() {
        0
    } else {
        1
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub seed_base: u64,
    pub jobs: usize,
    pub method: Option<Method>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub n_robots: usize,
    pub trial: usize,
    pub dir: PathBuf,
    pub summary: RunSummary,
}

pub fn run_dir_name(n_robots: usize, trial: usize) -> String {
    format!("n{n_robots:03}_trial{trial:02}")
}

pub fn sweep_seed(seed_base: u64, n_robots: usize, trial: usize) -> u64 {
    seed_base + 1000 * n_robots as u64 + trial as u64
}

/// Runs `trials` random teams for every size on a bounded worker pool, then
/// writes the aggregate CSV. Runs are returned in (size, trial) order.
pub fn sweep(template: &Scenario, config: &SweepConfig, out: &Path) -> Result<Vec<SweepRun>> {
    if config.trials == 0 {
        bail!("trials must be at least 1");
    }
    if config.sizes.is_empty() {
        bail!("no team sizes given");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let jobs: Vec<(usize, usize)> = config
        .sizes
        .iter()
        .flat_map(|&n| (0..config.trials).map(move |k| (n, k)))
        .collect();
    let workers = config.jobs.clamp(1, jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRun>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(n, trial)) = jobs.get(idx) else {
                    break;
                };
                let res = (|| -> Result<SweepRun> {
                    let seed = sweep_seed(config.seed_base, n, trial);
                    let mut scenario = generate_team(template, n, seed)?;
                    if let Some(m) = config.method {
                        scenario.method = m;
                    }
                    if let Some(s) = config.steps {
                        scenario.steps = s;
                    }
                    let dir = out.join(run_dir_name(n, trial));
                    fs::create_dir_all(&dir)?;
                    fs::write(dir.join("scenario.json"), scenario.to_json())?;
                    let summary = run_to_dir(&scenario, &dir)?;
                    log::info!("finished n={n} trial={trial}");
                    Ok(SweepRun {
                        n_robots: n,
                        trial,
                        dir,
                        summary,
                    })
                })();
                results.lock().expect("result lock")[idx] = Some(res);
            });
        }
    });

    let runs = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate(&runs)?;
    write_aggregate_csv(&out.join("aggregate.csv"), &rows)?;
    Ok(runs)
}

/// Per-run statistics used by the aggregate, computed from the run's
/// metrics CSV.
pub fn run_statistics(dir: &Path) -> Result<[f64; 6]> {
    let path = dir.join(METRICS_FILE);
    let wall = read_metric_column(&path, "step_wall_time")?;
    let pert = read_metric_column(&path, "perturbation")?;
    let l2 = read_metric_column(&path, "lambda2")?;
    let dr = read_metric_column(&path, "d_min_robot")?;
    let dob = read_metric_column(&path, "d_min_obstacle")?;
    let target = read_metric_column(&path, "d_avg_target")?;
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok([
        mean(&wall),
        mean(&pert),
        min(&l2),
        min(&dr),
        min(&dob),
        target.last().copied().unwrap_or(f64::NAN),
    ])
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of each per-run statistic, grouped
/// by team size.
pub fn aggregate(runs: &[SweepRun]) -> Result<Vec<AggregateRow>> {
    let mut sizes: Vec<usize> = runs.iter().map(|r| r.n_robots).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut rows = Vec::with_capacity(sizes.len());
    for n in sizes {
        let group: Vec<&SweepRun> = runs.iter().filter(|r| r.n_robots == n).collect();
        let stats = group
            .iter()
            .map(|r| run_statistics(&r.dir))
            .collect::<Result<Vec<_>>>()?;
        let mut cols = [(0.0, 0.0); 6];
        for (k, col) in cols.iter_mut().enumerate() {
            let v: Vec<f64> = stats.iter().map(|s| s[k]).collect();
            *col = mean_std(&v);
        }
        rows.push(AggregateRow {
            n_robots: n,
            trials: group.len(),
            disconnected_runs: group.iter().filter(|r| r.summary.disconnected).count(),
            failed_runs: group.iter().filter(|r| !r.summary.invariants_hold()).count(),
            stats: cols,
        });
    }
    Ok(rows)
}
