//! Noise schedules on the uniform grid `t_i = i / T`.
//!
//! Time runs from `t = 0` (noise) to `t = 1` (data), so `alpha_bar` is
//! strictly increasing with `alpha_bar(0) = 1e-4` and `alpha_bar(1) = 1`.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

/// `alpha_bar` at `t = 0`.
pub const ALPHA_BAR_MIN: f64 = 1e-4;

/// Offset of the cosine schedule.
const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ScheduleKind {
    /// `alpha_bar` interpolated linearly between `ALPHA_BAR_MIN` and 1.
    LinearAlphabar,
    /// Cosine schedule rescaled affinely onto `[ALPHA_BAR_MIN, 1]`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::arg("schedule needs T >= 2"));
        }
        let span = 1.0 - ALPHA_BAR_MIN;
        let mut alpha_bar: Vec<f64> = match kind {
            ScheduleKind::LinearAlphabar => (0..=steps)
                .map(|i| ALPHA_BAR_MIN + span * (i as f64 / steps as f64))
                .collect(),
            ScheduleKind::Cosine => {
                let f0 = cosine_profile(0.0);
                let f1 = cosine_profile(1.0);
                (0..=steps)
                    .map(|i| {
                        let g = (cosine_profile(i as f64 / steps as f64) - f0) / (f1 - f0);
                        ALPHA_BAR_MIN + span * g
                    })
                    .collect()
            }
        };
        alpha_bar[0] = ALPHA_BAR_MIN;
        alpha_bar[steps] = 1.0;
        Ok(NoiseSchedule { kind, alpha_bar })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of inference steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps() as f64
    }

    /// Grid time of step index `i`.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.steps() as f64
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Coefficients of the transition from grid index `i` to `i + 1`.
    pub fn coeffs(&self, i: usize) -> Result<StepCoeffs> {
        if i >= self.steps() {
            return Err(Error::arg("no step after t = 1"));
        }
        Ok(StepCoeffs::from_alpha_bars(self.alpha_bar[i], self.alpha_bar[i + 1]))
    }
}

/// `cos^2` profile in data-time: 0 at noise (`t = 0`), 1 at data (`t = 1`)
/// before rescaling.
fn cosine_profile(t: f64) -> f64 {
    let s = 1.0 - t;
    let c = ((s + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2).cos();
    c * c
}

/// Per-step DDPM coefficients, plus the posterior variance `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoeffs {
    pub alpha: f64,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub beta: f64,
}

impl StepCoeffs {
    /// Coefficients for `alpha_bar_t -> alpha_bar_next`. A flat pair gives the
    /// identity step (`c1 = 1`, all else 0).
    pub fn from_alpha_bars(alpha_bar_t: f64, alpha_bar_next: f64) -> Self {
        let alpha = alpha_bar_t / alpha_bar_next;
        let one_minus = 1.0 - alpha_bar_t;
        if alpha >= 1.0 || one_minus <= 0.0 {
            return StepCoeffs { alpha: 1.0, sigma: 0.0, c1: 1.0, c2: 0.0, beta: 0.0 };
        }
        let step_var = 1.0 - alpha;
        StepCoeffs {
            alpha,
            sigma: step_var.sqrt(),
            c1: alpha.sqrt() * (1.0 - alpha_bar_next) / one_minus,
            c2: alpha_bar_next.sqrt() * step_var / one_minus,
            beta: (1.0 - alpha_bar_next) * step_var / one_minus,
        }
    }
}
