//! Gradient and ratio estimator checks for a configured task.

use std::fmt::Write as _;

use steer_core::continuous::vjp_finite_difference;
use steer_core::discrete::{DiscreteSequence, MASK};
use steer_core::guidance::{
    exact_ratios, expectation_gradient, st_gumbel_gradient, taylor_ratios, GradientRows, ValueEstimate,
};
use steer_core::objective::{finite_difference_gradient, predict_hard, DifferentiablePredictor};
use steer_core::rng::{normal_vec, uniform, Purpose, StreamRng, Streams};
use steer_core::search::{CostModel, Task};
use steer_core::task::{ContinuousTask, DiscreteTask};

use crate::build::{build_task, BuiltTask};
use crate::config::{ExperimentConfig, ObjectiveConfig};
use crate::error::{HarnessError, Result};

/// Sample sizes of the straight-through convergence check.
pub const ST_SIZES: [usize; 4] = [16, 64, 256, 1024];
/// Relative error allowed at the largest sample size.
pub const ST_TOLERANCE: f64 = 0.05;
/// Replicates averaged per sample size.
pub const ST_REPLICATES: usize = 8;
pub const FD_TOLERANCE: f64 = 1e-5;
pub const LINEAR_RATIO_TOLERANCE: f64 = 1e-10;

fn aux(seed: u64, k: u64) -> StreamRng {
    Streams::new(seed).derive(Purpose::Aux, k, 0, 0)
}

fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Worst relative gap between the analytic predictor gradient and central
/// differences over a few random inputs.
pub fn predictor_fd_error<P: DifferentiablePredictor + ?Sized>(p: &P, soft_rows: Option<usize>, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..4 {
        let mut rng = aux(seed, i);
        let input: Vec<f64> = match soft_rows {
            // points inside the product of simplices
            Some(states) => {
                let mut v: Vec<f64> = (0..p.input_len()).map(|_| 0.05 + uniform(&mut rng)).collect();
                for row in v.chunks_mut(states) {
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|x| *x /= s);
                }
                v
            }
            None => normal_vec(&mut rng, p.input_len()),
        };
        worst = worst.max(max_rel_gap(&p.gradient(&input), &finite_difference_gradient(p, &input)));
    }
    worst
}

/// Closed-form ratios `(d, j)` of the fully masked state under the
/// predictor's hard-sample objective, masked rows only.
pub fn closed_form_ratios(task: &DiscreteTask, predictor: &dyn DifferentiablePredictor) -> Result<Vec<f64>> {
    let (dims, states) = (task.denoiser.dims(), task.denoiser.states());
    let tokens = vec![MASK; dims];
    let grad = expectation_gradient(&tokens, 0, task.denoiser.as_ref(), |x| predict_hard(predictor, x, states))?;
    Ok(taylor_ratios(&tokens, &grad, states)?)
}

/// Mean relative L2 error of straight-through ratios against
/// [`closed_form_ratios`] at the fully masked state.
pub fn st_relative_error(task: &DiscreteTask, tau: f64, n: usize, replicates: usize, seed: u64) -> Result<f64> {
    let predictor = task
        .predictor
        .as_deref()
        .ok_or_else(|| HarnessError::config("objective: gradient checks need a differentiable predictor"))?;
    let exact = closed_form_ratios(task, predictor)?;
    let (dims, states) = (task.denoiser.dims(), task.denoiser.states());
    let tokens = vec![MASK; dims];
    let norm = l2(&exact);
    let mut total = 0.0;
    for r in 0..replicates {
        let grad = st_gumbel_gradient(
            &tokens,
            0,
            task.denoiser.as_ref(),
            predictor,
            n,
            tau,
            GradientRows::Masked,
            &mut Streams::new(seed).derive(Purpose::Gradient, n as u64, r as u64, 0),
        )?;
        let st = taylor_ratios(&tokens, &grad, states)?;
        let diff: Vec<f64> = st.iter().zip(&exact).map(|(a, b)| a - b).collect();
        total += if norm > 0.0 { l2(&diff) / norm } else { l2(&diff) };
    }
    Ok(total / replicates as f64)
}

/// States visited by unguided rollouts, cut at random depths.
pub fn random_states(task: &DiscreteTask, count: usize, seed: u64) -> Result<Vec<DiscreteSequence>> {
    let mut out = Vec::with_capacity(count);
    let mut cost = CostModel::default();
    for i in 0..count {
        let mut rng = aux(seed, 1000 + i as u64);
        let depth = (uniform(&mut rng) * task.steps as f64) as usize;
        let mut state = task.init(&mut rng);
        for _ in 0..depth {
            state = task.unguided_step(&state, &mut rng, &mut cost)?;
        }
        out.push(state);
    }
    Ok(out)
}

/// Max `|taylor - exact|` over `states`, with Taylor ratios from the exact
/// expectation gradient and exact ratios from enumerated values.
pub fn ratio_gap(task: &DiscreteTask, states: &[DiscreteSequence]) -> Result<f64> {
    let s = task.denoiser.states();
    let mut worst = 0.0f64;
    for st in states {
        let f = |x: &[u8]| task.objective.score(x);
        let grad = expectation_gradient(&st.tokens, st.step, task.denoiser.as_ref(), f)?;
        let taylor = taylor_ratios(&st.tokens, &grad, s)?;
        let exact = exact_ratios(
            &st.tokens,
            st.step,
            task.denoiser.as_ref(),
            task.objective.as_ref(),
            ValueEstimate::Exact,
            &aux(0, 0),
        )?;
        worst = taylor.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub text: String,
    pub passed: bool,
}

fn continuous_report(task: &ContinuousTask, out: &mut String) -> bool {
    let mut ok = true;
    if let Some(p) = task.predictor.as_deref() {
        let e = predictor_fd_error(p, None, 1);
        ok &= e <= FD_TOLERANCE;
        let _ = writeln!(out, "(a) predictor gradient vs central differences: max rel gap {e:.3e}");
    }
    let dim = task.denoiser.dim();
    let mut worst = 0.0f64;
    for i in 0..4 {
        let x = normal_vec(&mut aux(2, i), dim);
        let outer = normal_vec(&mut aux(3, i), dim);
        let step = (i as usize * task.schedule.steps()) / 4;
        if let Some(v) = task.denoiser.vjp(&x, step, &outer) {
            worst = worst.max(max_rel_gap(&v, &vjp_finite_difference(task.denoiser.as_ref(), &x, step, &outer)));
        }
    }
    ok &= worst <= FD_TOLERANCE;
    let _ = writeln!(out, "(a) denoiser VJP vs central differences: max rel gap {worst:.3e}");
    let _ = writeln!(out, "(b), (c): discrete tasks only");
    ok
}

fn discrete_report(cfg: &ExperimentConfig, task: &DiscreteTask, out: &mut String) -> Result<bool> {
    let Some(p) = task.predictor.as_deref() else {
        return Err(HarnessError::config("objective: gradient checks need a differentiable predictor"));
    };
    let states = task.denoiser.states();
    let mut ok = true;
    let e = predictor_fd_error(p, Some(states), 1);
    ok &= e <= FD_TOLERANCE;
    let _ = writeln!(out, "(a) predictor gradient vs central differences: max rel gap {e:.3e}");

    let tau = cfg.guidance.tau;
    let mut errors = Vec::new();
    for n in ST_SIZES {
        let err = st_relative_error(task, tau, n, ST_REPLICATES, 7)?;
        let _ = writeln!(out, "(b) straight-through vs closed form, tau {tau}, N {n:>4}: rel error {err:.4}");
        errors.push(err);
    }
    let decreasing = errors.windows(2).all(|w| w[1] <= w[0]);
    let last = *errors.last().expect("sizes are nonempty");
    ok &= decreasing && last <= ST_TOLERANCE;
    let _ = writeln!(
        out,
        "(b) decreasing in N: {decreasing}; N {} within {ST_TOLERANCE}: {}",
        ST_SIZES[ST_SIZES.len() - 1],
        last <= ST_TOLERANCE
    );

    let gap = ratio_gap(task, &random_states(task, 100, 11)?)?;
    let _ = write!(out, "(c) taylor vs exact ratios over 100 states: max abs gap {gap:.3e}");
    if matches!(cfg.objective, ObjectiveConfig::Linear { .. }) {
        ok &= gap < LINEAR_RATIO_TOLERANCE;
        let _ = writeln!(out, " (linear predictor, tolerance {LINEAR_RATIO_TOLERANCE:e})");
    } else {
        let _ = writeln!(out, " (informational)");
    }
    Ok(ok)
}

pub fn gradcheck(cfg: &ExperimentConfig) -> Result<GradcheckReport> {
    let mut text = String::new();
    let passed = match build_task(cfg)? {
        BuiltTask::Continuous(t) => continuous_report(&t, &mut text),
        BuiltTask::Discrete(t) => discrete_report(cfg, &t, &mut text)?,
    };
    Ok(GradcheckReport { text, passed })
}
