use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use steer::config::ExperimentConfig;
use steer::output::{append_rows, output_root, write_sweep, write_traces};
use steer::run::{run_config, sweep, ResultRow};
use steer::{gradcheck, toys, verify, HarnessError};

/// Tree-search path steering experiments.
///
/// Outputs go under $STEER_OUTPUT_ROOT (default ./steer-out). Exit codes:
/// 0 success, 1 check failure or runtime error, 2 configuration error.
#[derive(Parser)]
#[command(name = "steer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the exact-identity and enumeration-oracle suite.
    Verify,
    /// Run every seed of a config and append the rows to its CSV.
    Run {
        config: PathBuf,
        /// Override `search.seeds`.
        #[arg(long)]
        seeds: Option<usize>,
        /// Override `search.threads`.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run every power-of-two (A, K) split of each budget.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<usize>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check predictor gradients, the straight-through estimator and Taylor
    /// ratios for a config.
    Gradcheck { config: PathBuf },
    /// Print a shipped toy config (continuous-count, token-count,
    /// classifier).
    Toy { name: String },
}

fn load(path: &PathBuf, seeds: Option<usize>, threads: Option<usize>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seeds {
        cfg.search.seeds = s;
    }
    if threads.is_some() {
        cfg.search.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(rows: &[&ResultRow]) -> String {
    let n = rows.len() as f64;
    let mean_fy = rows.iter().map(|r| r.final_fy).sum::<f64>() / n;
    let mean_mae = rows.iter().map(|r| r.mae).sum::<f64>() / n;
    format!("{} runs, mean f_y {mean_fy:.6}, mean MAE {mean_mae:.6}", rows.len())
}

fn execute(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Verify => {
            let checks = verify::run_all()?;
            for c in &checks {
                println!("{c}");
            }
            Ok(checks.iter().all(|c| c.passed))
        }
        Command::Run { config, seeds, threads } => {
            let cfg = load(&config, seeds, threads)?;
            let records = run_config(&cfg)?;
            let root = output_root();
            let csv = root.join(&cfg.output.csv);
            append_rows(&csv, records.iter().map(|r| &r.row))?;
            if cfg.output.traces {
                write_traces(&root.join("traces"), &records)?;
            }
            let rows: Vec<&ResultRow> = records.iter().map(|r| &r.row).collect();
            println!("{}: {}", cfg.task_id(), summarize(&rows));
            println!("rows appended to {}", csv.display());
            Ok(true)
        }
        Command::Sweep { config, budgets, seeds, threads } => {
            let cfg = load(&config, seeds, threads)?;
            let result = sweep(&cfg, &budgets)?;
            let root = output_root();
            append_rows(&root.join(&cfg.output.csv), result.records.iter().map(|r| &r.row))?;
            if cfg.output.traces {
                write_traces(&root.join("traces"), &result.records)?;
            }
            let frontier = result.frontier();
            let summary = root.join("sweep.csv");
            write_sweep(&summary, &result.cells, &frontier)?;
            println!("{:>6} {:>4} {:>4} {:>14} {:>10} {:>10}", "budget", "A", "K", "mean f_y", "SE", "MAE");
            for c in &result.cells {
                let mark = if frontier.iter().any(|f| std::ptr::eq(*f, c)) { " *" } else { "" };
                println!(
                    "{:>6} {:>4} {:>4} {:>14.6} {:>10.6} {:>10.6}{mark}",
                    c.budget, c.a, c.k, c.mean_fy, c.se_fy, c.mean_mae
                );
            }
            println!("summary written to {}", summary.display());
            Ok(true)
        }
        Command::Gradcheck { config } => {
            let cfg = load(&config, None, None)?;
            let report = gradcheck::gradcheck(&cfg)?;
            print!("{}", report.text);
            println!("{}", if report.passed { "gradcheck passed" } else { "gradcheck FAILED" });
            Ok(report.passed)
        }
        Command::Toy { name } => match toys::ALL.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => {
                print!("{text}");
                Ok(true)
            }
            None => {
                let names: Vec<&str> = toys::ALL.iter().map(|(n, _)| *n).collect();
                Err(HarnessError::Config(format!("unknown toy {name:?}; expected one of {}", names.join(", "))))
            }
        },
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
