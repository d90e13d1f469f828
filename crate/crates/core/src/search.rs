//! Active-set tree search.
//!
//! Each step expands every member of the active set into candidates, ranks
//! all candidates jointly by value and keeps the best `A`. Ties keep the
//! earlier `(parent, branch)`. After the last step the member with the
//! highest objective on its clean sample is returned.

use alloc::vec::Vec;
use core::ops::AddAssign;

use crate::guidance::{Family, GuidanceConfig, RatioMode};
use crate::rng::{Purpose, StreamRng, Streams};
use crate::{Error, Result};

/// Counts of the three cost units: denoiser passes, objective/predictor
/// calls and gradient passes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostModel {
    pub model_calls: u64,
    pub pred_calls: u64,
    pub backprop_calls: u64,
}

impl AddAssign for CostModel {
    fn add_assign(&mut self, o: CostModel) {
        self.model_calls += o.model_calls;
        self.pred_calls += o.pred_calls;
        self.backprop_calls += o.backprop_calls;
    }
}

impl CostModel {
    pub fn new(model_calls: u64, pred_calls: u64, backprop_calls: u64) -> Self {
        CostModel { model_calls, pred_calls, backprop_calls }
    }

    fn scaled(self, k: u64) -> Self {
        CostModel::new(self.model_calls * k, self.pred_calls * k, self.backprop_calls * k)
    }
}

/// Static facts about a task that the cost model depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskShape {
    Continuous { dims: usize },
    Discrete { dims: usize, states: usize },
}

/// A proposed next state with its value.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<S> {
    pub state: S,
    /// Present only for destination proposals.
    pub destination: Option<S>,
    pub value: f64,
}

/// Stream keys for one parent at one step.
#[derive(Debug, Clone, Copy)]
pub struct ParentStreams {
    pub streams: Streams,
    pub step: u64,
    pub parent: u64,
}

impl ParentStreams {
    pub fn branch(&self, k: usize) -> StreamRng {
        self.streams.derive(Purpose::Branch, self.step, self.parent, k as u64)
    }

    pub fn value(&self, k: usize) -> StreamRng {
        self.streams.derive(Purpose::Value, self.step, self.parent, k as u64)
    }

    pub fn gradient(&self) -> StreamRng {
        self.streams.derive(Purpose::Gradient, self.step, self.parent, 0)
    }
}

/// A generative process plus objective that the search can drive.
pub trait Task: Sync {
    type State: Clone + Send + Sync;

    fn shape(&self) -> TaskShape;

    /// Number of grid steps `T`.
    fn steps(&self) -> usize;

    /// Rejects family/task combinations the task cannot run.
    fn check(&self, config: &GuidanceConfig) -> Result<()>;

    fn init(&self, rng: &mut StreamRng) -> Self::State;

    /// One unguided transition (one model pass).
    fn unguided_step(&self, state: &Self::State, rng: &mut StreamRng, cost: &mut CostModel) -> Result<Self::State>;

    /// Candidates for one parent under the configured family, in branch
    /// order.
    fn expand(
        &self,
        config: &GuidanceConfig,
        parent: &Self::State,
        k: usize,
        streams: ParentStreams,
        cost: &mut CostModel,
    ) -> Result<Vec<Candidate<Self::State>>>;

    /// Objective on a clean (final) state.
    fn score(&self, state: &Self::State) -> f64;

    fn abs_error(&self, state: &Self::State) -> f64;
}

/// Runs independent jobs; results come back in index order.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// In-order, single-threaded execution.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Per-step selection record.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub step: usize,
    pub guided: bool,
    /// Candidate values in `(parent, branch)` order; empty for unguided steps.
    pub values: Vec<f64>,
    pub parents: Vec<usize>,
    pub branches: Vec<usize>,
    /// Indices into `values` of the kept candidates, best first.
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchTrace {
    pub seed: u64,
    pub active: usize,
    pub branch: usize,
    pub steps: Vec<StepRecord>,
    /// Objective of every final member.
    pub final_scores: Vec<f64>,
    pub best_index: usize,
    pub final_fy: f64,
    pub abs_error: f64,
    pub cost: CostModel,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<S> {
    pub best: S,
    pub trace: SearchTrace,
}

/// Ranking order: descending value, NaN last, stable in candidate order.
fn rank(values: &[f64]) -> Vec<usize> {
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| key(values[b]).total_cmp(&key(values[a])));
    order
}

/// Runs the active-set search with `a` members and branch-out `k`.
pub fn run_tree_search<T: Task, E: Executor>(
    task: &T,
    config: &GuidanceConfig,
    a: usize,
    k: usize,
    seed: u64,
    executor: &E,
) -> Result<SearchOutcome<T::State>> {
    if a == 0 || k == 0 {
        return Err(Error::config("A and K must be >= 1"));
    }
    config.validate()?;
    task.check(config)?;
    let streams = Streams::new(seed);
    let steps = task.steps();
    let mut active: Vec<T::State> = (0..a)
        .map(|i| task.init(&mut streams.derive(Purpose::Init, 0, i as u64, 0)))
        .collect();
    let mut cost = CostModel::default();
    let mut records = Vec::with_capacity(steps);

    for step in 0..steps {
        let t = step as f64 / steps as f64;
        if !config.guided_at(t) {
            let moved = executor.map(a, |i| {
                let mut c = CostModel::default();
                let mut rng = streams.derive(Purpose::Branch, step as u64, i as u64, 0);
                task.unguided_step(&active[i], &mut rng, &mut c).map(|s| (s, c))
            });
            let mut next = Vec::with_capacity(a);
            for r in moved {
                let (s, c) = r?;
                cost += c;
                next.push(s);
            }
            active = next;
            records.push(StepRecord {
                step,
                guided: false,
                values: Vec::new(),
                parents: Vec::new(),
                branches: Vec::new(),
                selected: (0..a).collect(),
            });
            continue;
        }

        let expanded = executor.map(a, |i| {
            let mut c = CostModel::default();
            let ps = ParentStreams { streams, step: step as u64, parent: i as u64 };
            task.expand(config, &active[i], k, ps, &mut c).map(|v| (v, c))
        });
        let mut pool = Vec::with_capacity(a * k);
        let (mut values, mut parents, mut branches) = (Vec::new(), Vec::new(), Vec::new());
        for (i, r) in expanded.into_iter().enumerate() {
            let (cands, c) = r?;
            cost += c;
            for (j, cand) in cands.into_iter().enumerate() {
                values.push(cand.value);
                parents.push(i);
                branches.push(j);
                pool.push(Some(cand.state));
            }
        }
        if pool.len() < a {
            return Err(Error::config("fewer candidates than active-set slots"));
        }
        let mut selected = rank(&values);
        selected.truncate(a);
        active = selected
            .iter()
            .map(|&idx| pool[idx].take().expect("each candidate is selected at most once"))
            .collect();
        records.push(StepRecord { step, guided: true, values, parents, branches, selected });
    }

    let final_scores: Vec<f64> = active.iter().map(|s| task.score(s)).collect();
    let best_index = rank(&final_scores)[0];
    let best = active.swap_remove(best_index);
    let trace = SearchTrace {
        seed,
        active: a,
        branch: k,
        steps: records,
        final_fy: final_scores[best_index],
        abs_error: task.abs_error(&best),
        final_scores,
        best_index,
        cost,
    };
    Ok(SearchOutcome { best, trace })
}

/// Closed-form cost of [`run_tree_search`].
///
/// Per guided step, with `A` members and branch-out `K`:
///
/// | family | model | pred | backprop |
/// |---|---|---|---|
/// | sample-current | `A + A K` | `A K N` | 0 |
/// | sample-destination (discrete) | `A` | `A K` | 0 |
/// | sample-destination (continuous) | `A` | `A (K N_iter + 1)` | 0 |
/// | gradient, Taylor ratios | `A K` | `A K N` | `A` |
/// | gradient, exact ratios | `A (D S + 1) + A K` | `A N (D S + 1) + A K N` | 0 |
///
/// Continuous values are point estimates, so `N` counts as 1 there. Steps
/// outside the guidance window (and every step of the unguided family) cost
/// `A` model passes. Final scoring of the active set is not counted.
pub fn predict_cost(config: &GuidanceConfig, shape: TaskShape, a: usize, k: usize, steps: usize) -> CostModel {
    let (a, k) = (a as u64, k as u64);
    let n = match shape {
        TaskShape::Continuous { .. } => 1,
        TaskShape::Discrete { .. } => config.n as u64,
    };
    let guided_step = match config.family {
        Family::SampleCurrent => CostModel::new(a + a * k, a * k * n, 0),
        Family::SampleDestination => match shape {
            TaskShape::Continuous { .. } => CostModel::new(a, a * (k * config.n_iter as u64 + 1), 0),
            TaskShape::Discrete { .. } => CostModel::new(a, a * k, 0),
        },
        Family::Gradient => match (shape, config.ratio_mode) {
            (TaskShape::Discrete { dims, states }, RatioMode::Exact) => {
                let evals = (dims * states) as u64 + 1;
                CostModel::new(a * evals + a * k, a * n * evals + a * k * n, 0)
            }
            _ => CostModel::new(a * k, a * k * n, a),
        },
        Family::Unguided => CostModel::new(a, 0, 0),
    };
    let guided = (0..steps).filter(|&i| config.guided_at(i as f64 / steps as f64)).count() as u64;
    let mut total = guided_step.scaled(guided);
    total += CostModel::new(a, 0, 0).scaled(steps as u64 - guided);
    total
}

/// `(A, K)` pairs with `A K = budget`, both powers of two, ascending in `A`.
pub fn budget_pairs(budget: usize) -> Result<Vec<(usize, usize)>> {
    if budget == 0 || !budget.is_power_of_two() {
        return Err(Error::arg("budget must be a power of two"));
    }
    let mut out = Vec::new();
    let mut a = 1;
    while a <= budget {
        out.push((a, budget / a));
        a *= 2;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ranking_breaks_ties_by_position() {
        assert_eq!(rank(&[1.0, 3.0, 3.0, 2.0, f64::NAN, 3.0]), vec![1, 2, 5, 3, 0, 4]);
    }

    #[test]
    fn budget_factorizations() {
        assert_eq!(budget_pairs(1).unwrap(), vec![(1, 1)]);
        assert_eq!(budget_pairs(16).unwrap(), vec![(1, 16), (2, 8), (4, 4), (8, 2), (16, 1)]);
        assert!(budget_pairs(12).is_err());
    }

    #[test]
    fn destination_cost_row() {
        let cfg = GuidanceConfig::with_family(Family::SampleDestination);
        let c = predict_cost(&cfg, TaskShape::Discrete { dims: 4, states: 3 }, 1, 16, 100);
        assert_eq!(c, CostModel::new(100, 1600, 0));
    }

    #[test]
    fn gradient_cost_row() {
        let cfg = GuidanceConfig { n: 8, ..GuidanceConfig::with_family(Family::Gradient) };
        let c = predict_cost(&cfg, TaskShape::Discrete { dims: 4, states: 3 }, 3, 1, 10);
        assert_eq!(c, CostModel::new(30, 240, 30));
    }

    #[test]
    fn cost_is_linear_in_a() {
        for family in [Family::SampleCurrent, Family::SampleDestination, Family::Gradient, Family::Unguided] {
            let cfg = GuidanceConfig { window: (0.3, 0.8), ..GuidanceConfig::with_family(family) };
            for shape in [TaskShape::Continuous { dims: 3 }, TaskShape::Discrete { dims: 3, states: 2 }] {
                let one = predict_cost(&cfg, shape, 2, 3, 20);
                assert_eq!(predict_cost(&cfg, shape, 4, 3, 20), one.scaled(2));
            }
        }
    }
}
