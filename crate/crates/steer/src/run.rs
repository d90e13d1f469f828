//! Seeded runs and fixed-budget sweeps.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use steer_core::guidance::GuidanceConfig;
use steer_core::search::{budget_pairs, run_tree_search, CostModel, Executor, SearchTrace, Serial, Task};

use crate::build::{build_task, BuiltTask};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// Runs candidate expansion on the rayon pool; results keep index order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallel;

impl Executor for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub family: String,
    pub a: usize,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub final_fy: f64,
    pub mae: f64,
    pub wall_s: f64,
    pub cost: CostModel,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub row: ResultRow,
    pub trace: SearchTrace,
}

/// Seeds `first..first + count` of one `(A, K)` cell.
#[derive(Debug, Clone, Copy)]
pub struct RunPlan {
    pub a: usize,
    pub k: usize,
    pub first_seed: u64,
    pub seeds: usize,
    /// `Some(1)` runs everything on the calling thread.
    pub threads: Option<usize>,
}

impl RunPlan {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        RunPlan {
            a: cfg.search.active,
            k: cfg.search.branch,
            first_seed: cfg.search.first_seed,
            seeds: cfg.search.seeds,
            threads: cfg.search.threads,
        }
    }
}

fn one_run<T: Task, E: Executor>(
    task: &T,
    task_id: &str,
    guidance: &GuidanceConfig,
    a: usize,
    k: usize,
    seed: u64,
    executor: &E,
) -> Result<RunRecord> {
    let start = Instant::now();
    let out = run_tree_search(task, guidance, a, k, seed, executor)?;
    let wall_s = start.elapsed().as_secs_f64();
    let row = ResultRow {
        task: task_id.to_string(),
        family: guidance.family.name().to_string(),
        a,
        k,
        n: guidance.n,
        seed,
        final_fy: out.trace.final_fy,
        mae: out.trace.abs_error,
        wall_s,
        cost: out.trace.cost,
    };
    Ok(RunRecord { row, trace: out.trace })
}

fn run_plan_on<T: Task>(task: &T, task_id: &str, guidance: &GuidanceConfig, plan: RunPlan) -> Result<Vec<RunRecord>> {
    let seeds: Vec<u64> = (0..plan.seeds as u64).map(|i| plan.first_seed + i).collect();
    if plan.threads == Some(1) {
        return seeds.iter().map(|&s| one_run(task, task_id, guidance, plan.a, plan.k, s, &Serial)).collect();
    }
    let work = || {
        seeds
            .par_iter()
            .map(|&s| one_run(task, task_id, guidance, plan.a, plan.k, s, &Parallel))
            .collect::<Result<Vec<_>>>()
    };
    match plan.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::config(format!("search.threads: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Runs every seed of `plan` on an already built task.
pub fn run_plan(
    task: &BuiltTask,
    task_id: &str,
    guidance: &GuidanceConfig,
    plan: RunPlan,
) -> Result<Vec<RunRecord>> {
    match task {
        BuiltTask::Continuous(t) => run_plan_on(t, task_id, guidance, plan),
        BuiltTask::Discrete(t) => run_plan_on(t, task_id, guidance, plan),
    }
}

/// Builds the task and runs the configured `(A, K)` cell.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let task = build_task(cfg)?;
    run_plan(&task, &cfg.task_id(), &cfg.guidance, RunPlan::from_config(cfg))
}

/// Aggregate of one `(budget, A, K)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub budget: usize,
    pub a: usize,
    pub k: usize,
    pub seeds: usize,
    pub mean_fy: f64,
    pub sd_fy: f64,
    pub se_fy: f64,
    pub mean_mae: f64,
    pub mean_wall_s: f64,
}

impl SweepCell {
    fn from_rows(budget: usize, a: usize, k: usize, rows: &[ResultRow]) -> Self {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&ResultRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean_fy = mean(&|r| r.final_fy);
        let var = if rows.len() > 1 {
            rows.iter().map(|r| (r.final_fy - mean_fy).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        SweepCell {
            budget,
            a,
            k,
            seeds: rows.len(),
            mean_fy,
            sd_fy: var.sqrt(),
            se_fy: (var / n).sqrt(),
            mean_mae: mean(&|r| r.mae),
            mean_wall_s: mean(&|r| r.wall_s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub records: Vec<RunRecord>,
}

impl SweepResult {
    /// Best cell of each budget by mean objective (first on ties), in budget
    /// order.
    pub fn frontier(&self) -> Vec<&SweepCell> {
        let mut out: Vec<&SweepCell> = Vec::new();
        for cell in &self.cells {
            match out.last_mut() {
                Some(best) if best.budget == cell.budget => {
                    if cell.mean_fy > best.mean_fy {
                        *best = cell;
                    }
                }
                _ => out.push(cell),
            }
        }
        out
    }
}

/// Every power-of-two `(A, K)` split of each budget, each over the
/// configured seeds.
pub fn sweep(cfg: &ExperimentConfig, budgets: &[usize]) -> Result<SweepResult> {
    if budgets.is_empty() {
        return Err(HarnessError::config("--budgets: at least one budget is required"));
    }
    let task = build_task(cfg)?;
    let id = cfg.task_id();
    let base = RunPlan::from_config(cfg);
    let mut cells = Vec::new();
    let mut records = Vec::new();
    for &budget in budgets {
        let pairs = budget_pairs(budget).map_err(|e| HarnessError::config(format!("--budgets: {e}")))?;
        for (a, k) in pairs {
            let recs = run_plan(&task, &id, &cfg.guidance, RunPlan { a, k, ..base })?;
            let rows: Vec<ResultRow> = recs.iter().map(|r| r.row.clone()).collect();
            cells.push(SweepCell::from_rows(budget, a, k, &rows));
            records.extend(recs);
        }
    }
    Ok(SweepResult { cells, records })
}
