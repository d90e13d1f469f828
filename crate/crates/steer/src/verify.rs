//! Exact-identity and enumeration-oracle checks behind `steer verify`.

use std::fmt;

use steer_core::continuous::{two_stage_moments, two_stage_variance_gap, ContinuousDenoiser, GaussianMixture, GmmDenoiser};
use steer_core::discrete::{
    conditional_rate, destination_rate, model_rate, transition_law, DiscreteDenoiser, TabularData, TabularDenoiser,
    MASK,
};
use steer_core::guidance::{
    exact_ratios, expectation_gradient, taylor_ratios, Family, GammaSchedule, GuidanceConfig, RatioMode,
    ValueEstimate,
};
use steer_core::objective::{LinearOneHot, Objective, PredictorObjective};
use steer_core::rng::{Purpose, StreamRng, Streams};
use steer_core::search::{predict_cost, run_tree_search, Serial, Task};
use steer_core::{NoiseSchedule, ScheduleKind};

use crate::build::{build_task, BuiltTask};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::run::Parallel;

/// Outcome of one check. Informational checks have no tolerance and
/// always pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: Option<f64>,
    pub passed: bool,
}

impl Check {
    fn bounded(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Check { name: name.into(), measured, tolerance: Some(tolerance), passed: measured <= tolerance }
    }

    fn info(name: impl Into<String>, measured: f64) -> Self {
        Check { name: name.into(), measured, tolerance: None, passed: true }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tolerance {
            Some(t) => write!(
                f,
                "{} {:<58} {:.3e} (tol {:.0e})",
                if self.passed { "PASS" } else { "FAIL" },
                self.name,
                self.measured,
                t
            ),
            None => write!(f, "INFO {:<58} {:.3e}", self.name, self.measured),
        }
    }
}

fn aux(seed: u64, k: u64) -> StreamRng {
    Streams::new(seed).derive(Purpose::Aux, k, 0, 0)
}

/// Every assignment of `[states]^dims`, first dimension most significant.
pub fn all_sequences(dims: usize, states: usize) -> Vec<Vec<u8>> {
    let total = states.pow(dims as u32);
    (0..total)
        .map(|mut i| {
            let mut x = vec![0u8; dims];
            for d in (0..dims).rev() {
                x[d] = (i % states) as u8;
                i /= states;
            }
            x
        })
        .collect()
}

/// Every partially masked input over `[states]^dims`.
pub fn all_masked_inputs(dims: usize, states: usize) -> Vec<Vec<u8>> {
    all_sequences(dims, states + 1)
        .into_iter()
        .map(|x| x.into_iter().map(|v| if v as usize == states { MASK } else { v }).collect())
        .collect()
}

/// Max relative error of `c1 sqrt(ab_t) + c2 = sqrt(ab_next)` on a `steps` grid.
pub fn schedule_identity(kind: ScheduleKind, steps: usize) -> Result<f64> {
    let s = NoiseSchedule::new(kind, steps)?;
    let mut worst = 0.0f64;
    for i in 0..steps {
        let c = s.coeffs(i)?;
        let rhs = s.alpha_bar(i + 1).sqrt();
        worst = worst.max((c.c1 * s.alpha_bar(i).sqrt() + c.c2 - rhs).abs() / rhs);
    }
    Ok(worst)
}

/// Max gap between the model rate and the brute-force data-posterior
/// average of the conditional rate, over every masked input of a random
/// `D = 3, S = 4` table.
pub fn rate_marginalization(seed: u64) -> Result<f64> {
    let (dims, states) = (3, 4);
    let data = TabularData::random(dims, states, 1.0, &mut aux(seed, 0))?;
    let den = TabularDenoiser::new(data.clone());
    let clean = all_sequences(dims, states);
    let mut worst = 0.0f64;
    for tokens in all_masked_inputs(dims, states) {
        let marg = den.predict(&tokens, 0)?;
        for t in [0.0, 0.25, 0.6, 0.95] {
            let rates = model_rate(&tokens, &marg, t)?;
            let mut z = 0.0;
            let mut acc = vec![0.0; dims * states];
            for x1 in clean.iter().filter(|x1| tokens.iter().zip(x1.iter()).all(|(&a, &b)| a == MASK || a == b)) {
                let w = data.prob(x1);
                z += w;
                for d in 0..dims {
                    for j in 0..states {
                        acc[d * states + j] += w * conditional_rate(tokens[d], j as u8, x1[d], t)?;
                    }
                }
            }
            for d in 0..dims {
                for j in 0..states {
                    worst = worst.max((rates.rate(d, j) - acc[d * states + j] / z).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Max gap between the one-step law under the model rate and the mixture,
/// over destinations drawn from the denoiser, of destination-conditioned
/// steps. Full enumeration on a random `D = 3, S = 4` table.
pub fn destination_marginalization(seed: u64) -> Result<f64> {
    let (dims, states) = (3, 4);
    let den = TabularDenoiser::new(TabularData::random(dims, states, 1.0, &mut aux(seed, 1))?);
    let outcomes = all_sequences(dims, states + 1);
    let clean = all_sequences(dims, states);
    let mut worst = 0.0f64;
    for tokens in all_masked_inputs(dims, states) {
        let marg = den.predict(&tokens, 0)?;
        for (t, dt) in [(0.0, 0.1), (0.5, 0.25), (0.9, 0.1)] {
            let model = transition_law(&tokens, &model_rate(&tokens, &marg, t)?, dt)?;
            let mut mixed = vec![0.0; outcomes.len()];
            for x1 in &clean {
                // observed rows are point masses, so inconsistent x1 get weight 0
                let w: f64 = (0..dims).map(|d| marg.row(d)[x1[d] as usize]).product();
                if w == 0.0 {
                    continue;
                }
                let law = transition_law(&tokens, &destination_rate(&tokens, x1, states, t)?, dt)?;
                for (o, y) in outcomes.iter().enumerate() {
                    mixed[o] += w * (0..dims).map(|d| law[d][y[d] as usize]).product::<f64>();
                }
            }
            for (o, y) in outcomes.iter().enumerate() {
                let direct: f64 = (0..dims).map(|d| model[d][y[d] as usize]).product();
                worst = worst.max((direct - mixed[o]).abs());
            }
        }
    }
    Ok(worst)
}

fn oracle_gmm(schedule: NoiseSchedule) -> Result<GmmDenoiser> {
    let mix = GaussianMixture::new(
        vec![0.3, 0.7],
        vec![vec![1.2, -0.4], vec![-0.7, 0.9]],
        vec![vec![0.25, 0.5], vec![0.6, 0.3]],
    )?;
    Ok(GmmDenoiser::new(mix, schedule))
}

/// Max relative gap between the two-stage composite mean and the DDPM step
/// mean `c1 x + c2 u(x)`, and the max variance gap, across a `steps` grid.
pub fn composite_moments(kind: ScheduleKind, steps: usize) -> Result<(f64, f64)> {
    let s = NoiseSchedule::new(kind, steps)?;
    let den = oracle_gmm(s.clone())?;
    let (mut mean_gap, mut var_gap) = (0.0f64, 0.0f64);
    for i in 0..steps {
        let c = s.coeffs(i)?;
        for x in [[-1.5, 0.2], [0.1, 0.1], [0.8, -2.0]] {
            let u = den.predict_x1(&x, i);
            let (mean, _) = two_stage_moments(&x, &u, &c);
            for d in 0..2 {
                // E[c1 x + c2 x1_hat + sqrt(beta) eps] with E[x1_hat] = u
                let ddpm = c.c1 * x[d] + c.c2 * u[d];
                mean_gap = mean_gap.max((mean[d] - ddpm).abs() / (1.0 + ddpm.abs()));
            }
        }
        var_gap = var_gap.max(two_stage_variance_gap(&c).abs());
    }
    Ok((mean_gap, var_gap))
}

/// Max `|taylor - exact|` for a linear predictor over every masked input of
/// a random `D = 3, S = 4` table.
pub fn linear_taylor_gap(seed: u64) -> Result<f64> {
    let (dims, states) = (3, 4);
    let den = TabularDenoiser::new(TabularData::random(dims, states, 1.0, &mut aux(seed, 2))?);
    let weights = steer_core::rng::normal_vec(&mut aux(seed, 3), dims * states);
    let obj = PredictorObjective { predictor: LinearOneHot::new(dims, states, weights)?, states };
    let mut worst = 0.0f64;
    for tokens in all_masked_inputs(dims, states) {
        let grad = expectation_gradient(&tokens, 0, &den, |x| obj.score(x))?;
        let taylor = taylor_ratios(&tokens, &grad, states)?;
        let exact = exact_ratios(&tokens, 0, &den, &obj, ValueEstimate::Exact, &aux(0, 0))?;
        worst = taylor.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok(worst)
}

/// Guidance configs exercised by the cost and determinism checks: every
/// family, both ratio modes and a partial guidance window.
pub fn family_configs() -> Vec<GuidanceConfig> {
    let mut out = Vec::new();
    for family in [Family::SampleCurrent, Family::SampleDestination, Family::Gradient, Family::Unguided] {
        let mut c = GuidanceConfig::with_family(family);
        c.n = 4;
        c.n_iter = 2;
        c.gamma = GammaSchedule::Linear { start: 0.5, end: 2.0 };
        out.push(c.clone());
        if family == Family::Gradient {
            c.ratio_mode = RatioMode::Exact;
            out.push(c.clone());
        }
        c.window = (0.3, 0.7);
        c.ratio_mode = RatioMode::Taylor;
        out.push(c);
    }
    out
}

/// Small configs for the structural checks.
pub fn small_configs() -> Vec<ExperimentConfig> {
    let text = [
        r#"
        [task]
        kind = "continuous-gmm"
        dims = 3
        weights = [0.5, 0.5]
        offsets = [0.5, -0.5]
        variance = 1.0
        [schedule]
        steps = 10
        [objective]
        kind = "count-above"
        epsilon = 0.0
        target = 2.0
        [search]
        active = 1
        branch = 1
        seeds = 1
        "#,
        r#"
        [task]
        kind = "discrete-tabular"
        dims = 4
        states = 3
        data = { kind = "count-weighted", token = 1, center = 1.0, width = 1.0 }
        [schedule]
        steps = 10
        [objective]
        kind = "token-count"
        token = 1
        target = 3.0
        [search]
        active = 1
        branch = 1
        seeds = 1
        "#,
    ];
    text.iter().map(|t| ExperimentConfig::from_toml(t).expect("built-in configs are valid")).collect()
}

/// `(A, K)` grid of the cost check.
pub const COST_GRID: [(usize, usize); 9] = [(1, 1), (1, 3), (1, 5), (2, 1), (2, 3), (2, 5), (4, 1), (4, 3), (4, 5)];

fn cost_mismatches_on<T: Task>(task: &T, configs: &[GuidanceConfig]) -> Result<usize> {
    let mut bad = 0;
    for g in configs {
        for (a, k) in COST_GRID {
            let got = run_tree_search(task, g, a, k, 5, &Serial)?.trace.cost;
            if got != predict_cost(g, task.shape(), a, k, task.steps()) {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

/// Number of `(task, config, A, K)` cells whose counters differ from
/// [`predict_cost`].
pub fn cost_mismatches() -> Result<usize> {
    let configs = family_configs();
    let mut bad = 0;
    for cfg in small_configs() {
        bad += match build_task(&cfg)? {
            BuiltTask::Continuous(t) => cost_mismatches_on(&t, &configs)?,
            BuiltTask::Discrete(t) => cost_mismatches_on(&t, &configs)?,
        };
    }
    Ok(bad)
}

fn order_mismatches_on<T: Task>(task: &T, configs: &[GuidanceConfig]) -> Result<usize>
where
    T::State: PartialEq,
{
    let mut bad = 0;
    for g in configs {
        for seed in 0..3 {
            let a = run_tree_search(task, g, 3, 2, seed, &Serial)?;
            let b = run_tree_search(task, g, 3, 2, seed, &Parallel)?;
            if a.trace != b.trace || a.best != b.best {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

/// Number of runs whose trace differs between serial and parallel
/// candidate expansion.
pub fn executor_mismatches() -> Result<usize> {
    let configs = family_configs();
    let mut bad = 0;
    for cfg in small_configs() {
        bad += match build_task(&cfg)? {
            BuiltTask::Continuous(t) => order_mismatches_on(&t, &configs)?,
            BuiltTask::Discrete(t) => order_mismatches_on(&t, &configs)?,
        };
    }
    Ok(bad)
}

/// Max relative gap of the GMM posterior-mean VJP against central
/// differences.
pub fn gmm_vjp_gap() -> Result<f64> {
    let s = NoiseSchedule::new(ScheduleKind::Cosine, 20)?;
    let den = oracle_gmm(s)?;
    let mut worst = 0.0f64;
    for (i, x) in [[0.3, -0.2], [1.5, 0.4], [-2.0, -1.0]].iter().enumerate() {
        let outer = [1.0, -0.5];
        let step = 4 + 6 * i;
        let a = den.vjp(x, step, &outer).expect("the GMM denoiser has a VJP");
        let b = steer_core::continuous::vjp_finite_difference(&den, x, step, &outer);
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        worst = a.iter().zip(&b).map(|(p, q)| (p - q).abs() / scale).fold(worst, f64::max);
    }
    Ok(worst)
}

/// Runs every check.
pub fn run_all() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (kind, name) in [(ScheduleKind::LinearAlphabar, "linear"), (ScheduleKind::Cosine, "cosine")] {
        out.push(Check::bounded(format!("schedule mean identity, {name}, T=1000"), schedule_identity(kind, 1000)?, 1e-12));
    }
    out.push(Check::bounded("model rate = posterior average of conditional rates", rate_marginalization(1)?, 1e-12));
    out.push(Check::bounded("destination mixture = model step law", destination_marginalization(2)?, 1e-12));
    for (kind, name) in [(ScheduleKind::LinearAlphabar, "linear"), (ScheduleKind::Cosine, "cosine")] {
        let (mean, var) = composite_moments(kind, 1000)?;
        out.push(Check::bounded(format!("two-stage mean = DDPM mean, {name}, T=1000"), mean, 1e-12));
        out.push(Check::info(format!("two-stage variance gap (max |.|), {name}, T=1000"), var));
    }
    out.push(Check::bounded("taylor = exact ratios, linear predictor", linear_taylor_gap(3)?, 1e-10));
    out.push(Check::bounded("GMM VJP vs central differences", gmm_vjp_gap()?, 1e-6));
    out.push(Check::bounded("cost counters = predicted cost (mismatched cells)", cost_mismatches()? as f64, 0.0));
    out.push(Check::bounded("serial = parallel expansion (mismatched runs)", executor_mismatches()? as f64, 0.0));
    Ok(out)
}
