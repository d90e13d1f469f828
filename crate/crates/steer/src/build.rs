//! Turns a validated config into a runnable task.

use steer_core::continuous::{GaussianMixture, GmmDenoiser};
use steer_core::discrete::{TabularData, TabularDenoiser};
use steer_core::objective::{
    CountAbove, LinearOneHot, PredictorObjective, QuadraticTokenCount, RuleObjective, SoftCountAbove,
    TabularClassifier, TabularMultilinear, TokenCount,
};
use steer_core::rng::{normal_vec, Purpose, Streams};
use steer_core::task::{ContinuousTask, DiscreteTask};
use steer_core::NoiseSchedule;

use crate::config::{DataConfig, ExperimentConfig, ObjectiveConfig, TaskConfig};
use crate::error::{HarnessError, Result};

pub enum BuiltTask {
    Continuous(ContinuousTask),
    Discrete(DiscreteTask),
}

fn seeded(seed: u64) -> steer_core::rng::StreamRng {
    Streams::new(seed).derive(Purpose::Aux, 0, 0, 0)
}

fn mismatch() -> HarnessError {
    HarnessError::config("objective.kind: does not match the task kind")
}

pub fn build_task(cfg: &ExperimentConfig) -> Result<BuiltTask> {
    cfg.validate()?;
    match &cfg.task {
        TaskConfig::ContinuousGmm { dims, weights, offsets, variance } => {
            let means = offsets.iter().map(|&o| vec![o; *dims]).collect();
            let variances = vec![vec![*variance; *dims]; weights.len()];
            let mixture = GaussianMixture::new(weights.clone(), means, variances)
                .map_err(|e| HarnessError::config(format!("task: {e}")))?;
            let schedule = NoiseSchedule::new(cfg.schedule.kind, cfg.schedule.steps)?;
            let ObjectiveConfig::CountAbove { epsilon, target, sigma, temperature } = cfg.objective else {
                return Err(mismatch());
            };
            let scale = 1.0 / (2.0 * sigma * sigma);
            Ok(BuiltTask::Continuous(ContinuousTask {
                denoiser: Box::new(GmmDenoiser::new(mixture, schedule.clone())),
                schedule,
                objective: Box::new(RuleObjective::gaussian(CountAbove { epsilon }, target, sigma)?),
                predictor: Some(Box::new(SoftCountAbove { dim: *dims, epsilon, target, temperature, scale })),
            }))
        }
        TaskConfig::DiscreteTabular { dims, states, data } => {
            let (dims, states) = (*dims, *states);
            let data = match *data {
                DataConfig::CountWeighted { token, center, width } => {
                    TabularData::count_weighted(dims, states, token, center, width)?
                }
                DataConfig::Random { spread, seed } => TabularData::random(dims, states, spread, &mut seeded(seed))?,
            };
            let mut task = DiscreteTask {
                denoiser: Box::new(TabularDenoiser::new(data)),
                steps: cfg.schedule.steps,
                objective: Box::new(PredictorObjective {
                    predictor: LinearOneHot::new(dims, states, vec![0.0; dims * states])?,
                    states,
                }),
                predictor: None,
            };
            match cfg.objective {
                ObjectiveConfig::TokenCount { token, target, sigma } => {
                    task.objective = Box::new(RuleObjective::gaussian(TokenCount { token }, target, sigma)?);
                    let scale = 1.0 / (2.0 * sigma * sigma);
                    task.predictor = Some(Box::new(QuadraticTokenCount { dims, states, token, target, scale }));
                }
                ObjectiveConfig::Classifier { bias, scale, seed } => {
                    let classifier = TabularClassifier::random(dims, states, bias, scale, &mut seeded(seed))?;
                    task.predictor = Some(Box::new(TabularMultilinear::new(classifier.clone())));
                    task.objective = Box::new(classifier);
                }
                ObjectiveConfig::Linear { scale, seed } => {
                    let weights = normal_vec(&mut seeded(seed), dims * states).into_iter().map(|w| scale * w).collect();
                    let linear = LinearOneHot::new(dims, states, weights)?;
                    task.predictor = Some(Box::new(linear.clone()));
                    task.objective = Box::new(PredictorObjective { predictor: linear, states });
                }
                ObjectiveConfig::CountAbove { .. } => return Err(mismatch()),
            }
            Ok(BuiltTask::Discrete(task))
        }
    }
}
