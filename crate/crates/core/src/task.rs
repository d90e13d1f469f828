//! Concrete search tasks for the continuous and discrete samplers.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::continuous::{ddpm_transition, ContinuousDenoiser, ContinuousState};
use crate::discrete::{euler_step, model_rate, DiscreteDenoiser, DiscreteSequence};
use crate::guidance::{
    branch_out_destination_continuous, branch_out_destination_discrete, continuous_guidance_gradient,
    exact_ratios_with_base, gradient_step_continuous, guided_rate, mc_log_py, rho, st_gumbel_gradient_with_base,
    taylor_ratios, Family, GradientRows, GuidanceConfig, RatioMode, ValueEstimate,
};
use crate::objective::{DifferentiablePredictor, Objective};
use crate::rng::StreamRng;
use crate::schedule::NoiseSchedule;
use crate::search::{Candidate, CostModel, ParentStreams, Task, TaskShape};
use crate::{Error, Result};

/// DDPM sampling in `R^D` with a denoiser, an objective on clean samples and
/// an optional differentiable predictor for the gradient family.
pub struct ContinuousTask {
    pub denoiser: Box<dyn ContinuousDenoiser>,
    pub schedule: NoiseSchedule,
    pub objective: Box<dyn Objective<[f64]>>,
    pub predictor: Option<Box<dyn DifferentiablePredictor>>,
}

impl ContinuousTask {
    fn value(&self, state: &ContinuousState, cost: &mut CostModel) -> f64 {
        cost.model_calls += 1;
        cost.pred_calls += 1;
        self.objective.score(&self.denoiser.predict_x1(&state.x, state.step))
    }
}

impl Task for ContinuousTask {
    type State = ContinuousState;

    fn shape(&self) -> TaskShape {
        TaskShape::Continuous { dims: self.denoiser.dim() }
    }

    fn steps(&self) -> usize {
        self.schedule.steps()
    }

    fn check(&self, config: &GuidanceConfig) -> Result<()> {
        if config.family == Family::Gradient && self.predictor.is_none() {
            return Err(Error::config("gradient guidance needs a differentiable predictor"));
        }
        Ok(())
    }

    fn init(&self, rng: &mut StreamRng) -> ContinuousState {
        ContinuousState::noise(self.denoiser.dim(), rng)
    }

    fn unguided_step(&self, state: &ContinuousState, rng: &mut StreamRng, cost: &mut CostModel) -> Result<ContinuousState> {
        let coeffs = self.schedule.coeffs(state.step)?;
        cost.model_calls += 1;
        let x1_hat = self.denoiser.predict_x1(&state.x, state.step);
        Ok(ContinuousState::new(ddpm_transition(&state.x, &x1_hat, &coeffs, rng), state.step + 1))
    }

    fn expand(
        &self,
        config: &GuidanceConfig,
        parent: &ContinuousState,
        k: usize,
        streams: ParentStreams,
        cost: &mut CostModel,
    ) -> Result<Vec<Candidate<ContinuousState>>> {
        let coeffs = self.schedule.coeffs(parent.step)?;
        let next_step = parent.step + 1;
        match config.family {
            Family::SampleCurrent => {
                cost.model_calls += 1;
                let x1_hat = self.denoiser.predict_x1(&parent.x, parent.step);
                Ok((0..k)
                    .map(|j| {
                        let x = ddpm_transition(&parent.x, &x1_hat, &coeffs, &mut streams.branch(j));
                        let state = ContinuousState::new(x, next_step);
                        let value = self.value(&state, cost);
                        Candidate { state, destination: None, value }
                    })
                    .collect())
            }
            Family::SampleDestination => {
                cost.model_calls += 1;
                let x1_hat = self.denoiser.predict_x1(&parent.x, parent.step);
                let draw = branch_out_destination_continuous(
                    &parent.x,
                    &x1_hat,
                    &coeffs,
                    rho(config.rho_scale, coeffs.sigma),
                    k,
                    config.n_iter,
                    config.dsg,
                    self.objective.as_ref(),
                    &mut streams.branch(0),
                );
                cost.pred_calls += draw.evaluations as u64;
                Ok(alloc::vec![Candidate {
                    state: ContinuousState::new(draw.next, next_step),
                    destination: Some(ContinuousState::new(draw.destination, self.schedule.steps())),
                    value: draw.value,
                }])
            }
            Family::Gradient => {
                let predictor = self.predictor.as_deref().ok_or_else(|| Error::config("missing predictor"))?;
                cost.backprop_calls += 1;
                let (x1_hat, g) = continuous_guidance_gradient(&parent.x, parent.step, self.denoiser.as_ref(), predictor);
                let gamma = config.gamma.at(self.schedule.time(parent.step));
                Ok((0..k)
                    .map(|j| {
                        let x = gradient_step_continuous(&parent.x, &x1_hat, &g, &coeffs, gamma, &mut streams.branch(j));
                        let state = ContinuousState::new(x, next_step);
                        let value = self.value(&state, cost);
                        Candidate { state, destination: None, value }
                    })
                    .collect())
            }
            Family::Unguided => {
                let state = self.unguided_step(parent, &mut streams.branch(0), cost)?;
                Ok(alloc::vec![Candidate { state, destination: None, value: 0.0 }])
            }
        }
    }

    fn score(&self, state: &ContinuousState) -> f64 {
        self.objective.score(&state.x)
    }

    fn abs_error(&self, state: &ContinuousState) -> f64 {
        self.objective.abs_error(&state.x)
    }
}

/// Masked discrete flow over `[S]^D` with `steps` Euler steps.
pub struct DiscreteTask {
    pub denoiser: Box<dyn DiscreteDenoiser>,
    pub steps: usize,
    pub objective: Box<dyn Objective<[u8]>>,
    pub predictor: Option<Box<dyn DifferentiablePredictor>>,
}

impl DiscreteTask {
    fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    fn time(&self, step: usize) -> f64 {
        step as f64 / self.steps as f64
    }

    fn value(&self, state: &DiscreteSequence, n: usize, rng: &mut StreamRng, cost: &mut CostModel) -> Result<f64> {
        cost.model_calls += 1;
        cost.pred_calls += n as u64;
        let marginals = self.denoiser.predict(&state.tokens, state.step)?;
        Ok(mc_log_py(&marginals, self.objective.as_ref(), n, rng))
    }

    fn advance(
        &self,
        parent: &DiscreteSequence,
        rates: &crate::discrete::RateSpec,
        rng: &mut StreamRng,
    ) -> Result<DiscreteSequence> {
        Ok(DiscreteSequence::new(euler_step(&parent.tokens, rates, self.dt(), rng)?, parent.step + 1))
    }
}

impl Task for DiscreteTask {
    type State = DiscreteSequence;

    fn shape(&self) -> TaskShape {
        TaskShape::Discrete { dims: self.denoiser.dims(), states: self.denoiser.states() }
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn check(&self, config: &GuidanceConfig) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("discrete task needs at least one step"));
        }
        if config.family == Family::Gradient && config.ratio_mode == RatioMode::Taylor && self.predictor.is_none() {
            return Err(Error::config("Taylor ratios need a differentiable predictor"));
        }
        Ok(())
    }

    fn init(&self, _rng: &mut StreamRng) -> DiscreteSequence {
        DiscreteSequence::masked(self.denoiser.dims())
    }

    fn unguided_step(&self, state: &DiscreteSequence, rng: &mut StreamRng, cost: &mut CostModel) -> Result<DiscreteSequence> {
        cost.model_calls += 1;
        let marginals = self.denoiser.predict(&state.tokens, state.step)?;
        let rates = model_rate(&state.tokens, &marginals, self.time(state.step))?;
        self.advance(state, &rates, rng)
    }

    fn expand(
        &self,
        config: &GuidanceConfig,
        parent: &DiscreteSequence,
        k: usize,
        streams: ParentStreams,
        cost: &mut CostModel,
    ) -> Result<Vec<Candidate<DiscreteSequence>>> {
        let t = self.time(parent.step);
        match config.family {
            Family::SampleCurrent => {
                cost.model_calls += 1;
                let marginals = self.denoiser.predict(&parent.tokens, parent.step)?;
                let rates = model_rate(&parent.tokens, &marginals, t)?;
                (0..k)
                    .map(|j| {
                        let state = self.advance(parent, &rates, &mut streams.branch(j))?;
                        let value = self.value(&state, config.n, &mut streams.value(j), cost)?;
                        Ok(Candidate { state, destination: None, value })
                    })
                    .collect()
            }
            Family::SampleDestination => {
                cost.model_calls += 1;
                let marginals = self.denoiser.predict(&parent.tokens, parent.step)?;
                (0..k)
                    .map(|j| {
                        let draw = branch_out_destination_discrete(
                            &parent.tokens,
                            &marginals,
                            t,
                            self.dt(),
                            self.objective.as_ref(),
                            &mut streams.branch(j),
                        )?;
                        cost.pred_calls += 1;
                        Ok(Candidate {
                            state: DiscreteSequence::new(draw.next, parent.step + 1),
                            destination: Some(DiscreteSequence::new(draw.destination, self.steps)),
                            value: draw.value,
                        })
                    })
                    .collect()
            }
            Family::Gradient => {
                let (ratios, marginals) = match config.ratio_mode {
                    RatioMode::Taylor => {
                        let predictor = self.predictor.as_deref().ok_or_else(|| Error::config("missing predictor"))?;
                        cost.backprop_calls += 1;
                        let (grad, base) = st_gumbel_gradient_with_base(
                            &parent.tokens,
                            parent.step,
                            self.denoiser.as_ref(),
                            predictor,
                            config.n,
                            config.tau,
                            GradientRows::Masked,
                            &mut streams.gradient(),
                        )?;
                        (taylor_ratios(&parent.tokens, &grad, self.denoiser.states())?, base)
                    }
                    RatioMode::Exact => {
                        let evals = (self.denoiser.dims() * self.denoiser.states()) as u64 + 1;
                        cost.model_calls += evals;
                        cost.pred_calls += evals * config.n as u64;
                        exact_ratios_with_base(
                            &parent.tokens,
                            parent.step,
                            self.denoiser.as_ref(),
                            self.objective.as_ref(),
                            ValueEstimate::MonteCarlo(config.n),
                            &streams.gradient(),
                        )?
                    }
                };
                let rates = model_rate(&parent.tokens, &marginals, t)?;
                let guided = guided_rate(&rates, &ratios, config.gamma.at(t))?;
                (0..k)
                    .map(|j| {
                        let state = self.advance(parent, &guided, &mut streams.branch(j))?;
                        let value = self.value(&state, config.n, &mut streams.value(j), cost)?;
                        Ok(Candidate { state, destination: None, value })
                    })
                    .collect()
            }
            Family::Unguided => {
                let state = self.unguided_step(parent, &mut streams.branch(0), cost)?;
                Ok(alloc::vec![Candidate { state, destination: None, value: 0.0 }])
            }
        }
    }

    fn score(&self, state: &DiscreteSequence) -> f64 {
        self.objective.score(&state.tokens)
    }

    fn abs_error(&self, state: &DiscreteSequence) -> f64 {
        self.objective.abs_error(&state.tokens)
    }
}
