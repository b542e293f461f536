use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use losnet_cli::{exit_code, load_scenario, run_to_dir, sweep, RunOptions, SweepConfig};
use losnet_core::scenario::Method;

#[derive(Parser)]
#[command(name = "losnet", version, about = "Line-of-sight connectivity maintenance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics, trajectory and summary files.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run randomly generated teams of several sizes and aggregate the results.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        steps: Option<usize>,
        /// Worker threads (defaults to the available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a scenario file and report every problem found.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            method,
            seed,
            steps,
        } => {
            let mut s = load_scenario(&scenario)?;
            RunOptions { method, seed, steps }.apply(&mut s);
            let summary = run_to_dir(&s, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            for v in &summary.violations {
                eprintln!("invariant violated: {v}");
            }
            if let Some(reason) = &summary.aborted {
                eprintln!("run aborted: {reason}");
            }
            Ok(exit_code(&summary))
        }
        Command::Sweep {
            scenario,
            sizes,
            trials,
            out,
            seed,
            method,
            steps,
            jobs,
        } => {
            let template = load_scenario(&scenario)?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let config = SweepConfig {
                sizes,
                trials,
                seed_base: seed,
                jobs,
                method,
                steps,
            };
            let runs = sweep(&template, &config, &out)?;
            let failed: Vec<_> = runs.iter().filter(|r| !r.summary.invariants_hold()).collect();
            for r in &failed {
                eprintln!("{}: {:?}", r.dir.display(), r.summary.violations);
            }
            println!(
                "{} runs, {} with violated invariants; aggregate in {}",
                runs.len(),
                failed.len(),
                out.join("aggregate.csv").display()
            );
            Ok(i32::from(!failed.is_empty()))
        }
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario)?;
            println!(
                "{}: valid ({} robots, {} obstacles, method {}, hash {})",
                scenario.display(),
                s.robots.len(),
                s.obstacles.len(),
                s.method,
                s.hash()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
