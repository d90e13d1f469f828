//! Branch-out proposals, value functions and gradient-based rate guidance.
//!
//! Each operation is pure given its inputs and RNG stream. Model passes are
//! taken as arguments where possible so that callers control (and count)
//! denoiser evaluations.

mod destination;
mod gradient;
mod value;

pub use destination::{branch_out_destination_continuous, branch_out_destination_discrete, DestinationDraw};
pub use gradient::{
    continuous_guidance_gradient, exact_ratios, expectation_gradient, gradient_step_continuous, guided_rate,
    gumbel_softmax, st_gumbel_gradient, taylor_ratios, GradientRows, EXPONENT_CLIP,
};
pub(crate) use gradient::{exact_ratios_with_base, st_gumbel_gradient_with_base};
pub use value::{mc_log_py, value_current_continuous, value_current_discrete, ValueEstimate};

use crate::{Error, Result};

/// How candidates are proposed; each family has a fixed value function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Family {
    /// Next states from the model's own transition, valued by a lookahead
    /// estimate of the clean sample.
    SampleCurrent,
    /// Next states steered toward sampled clean destinations, valued by the
    /// objective on the destination.
    SampleDestination,
    /// Gradient-guided transitions, valued like [`Family::SampleCurrent`].
    Gradient,
    /// Plain sampling: no branching and no evaluation.
    Unguided,
}

impl Family {
    pub fn value_kind(self) -> Option<ValueKind> {
        match self {
            Family::SampleCurrent | Family::Gradient => Some(ValueKind::Current),
            Family::SampleDestination => Some(ValueKind::Destination),
            Family::Unguided => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::SampleCurrent => "sample-current",
            Family::SampleDestination => "sample-destination",
            Family::Gradient => "gradient",
            Family::Unguided => "unguided",
        }
    }
}

/// Value function applied to candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ValueKind {
    /// Objective on the denoiser's prediction from the candidate state.
    Current,
    /// Objective on the candidate's attached destination.
    Destination,
}

/// Guidance strength as a function of `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind"))]
pub enum GammaSchedule {
    Constant { value: f64 },
    /// `start + (end - start) t`.
    Linear { start: f64, end: f64 },
}

impl GammaSchedule {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            GammaSchedule::Constant { value } => value,
            GammaSchedule::Linear { start, end } => start + (end - start) * t,
        }
    }
}

/// How discrete log-ratios are obtained in the gradient family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum RatioMode {
    /// First-order expansion of a straight-through gradient estimate.
    Taylor,
    /// Monte-Carlo value differences at every single-token neighbor.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GuidanceConfig {
    pub family: Family,
    /// Optional explicit value function; must match the family's pairing.
    pub value: Option<ValueKind>,
    /// Monte-Carlo sample size for discrete values and gradients.
    pub n: usize,
    pub gamma: GammaSchedule,
    /// Destination exploration scale `s` in `rho_t = s sigma_t / sqrt(1 + sigma_t^2)`.
    pub rho_scale: f64,
    /// Keep-best rounds of the continuous destination search.
    pub n_iter: usize,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    /// Rescale the selected destination direction to norm `sqrt(D)` and use
    /// it as the step noise.
    pub dsg: bool,
    pub ratio_mode: RatioMode,
    /// Guidance is active for parent times `t` in `[start, end]`.
    pub window: (f64, f64),
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            family: Family::SampleCurrent,
            value: None,
            n: 16,
            gamma: GammaSchedule::Constant { value: 1.0 },
            rho_scale: 1.0,
            n_iter: 1,
            tau: 0.2,
            dsg: false,
            ratio_mode: RatioMode::Taylor,
            window: (0.0, 1.0),
        }
    }
}

impl GuidanceConfig {
    pub fn with_family(family: Family) -> Self {
        GuidanceConfig { family, ..GuidanceConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.value {
            if self.family.value_kind() != Some(v) {
                return Err(Error::config("value function does not match the branch-out family"));
            }
        }
        if self.n == 0 || self.n_iter == 0 {
            return Err(Error::config("n and n_iter must be >= 1"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if !(self.rho_scale >= 0.0) || !self.rho_scale.is_finite() {
            return Err(Error::config("rho_scale must be finite and nonnegative"));
        }
        let (a, b) = self.window;
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return Err(Error::config("guidance window must satisfy 0 <= start <= end <= 1"));
        }
        let gamma_ok = match self.gamma {
            GammaSchedule::Constant { value } => value.is_finite(),
            GammaSchedule::Linear { start, end } => start.is_finite() && end.is_finite(),
        };
        if !gamma_ok {
            return Err(Error::config("gamma must be finite"));
        }
        Ok(())
    }

    /// Whether a parent at time `t` is inside the guidance window.
    pub fn guided_at(&self, t: f64) -> bool {
        self.family != Family::Unguided && self.window.0 <= t && t <= self.window.1
    }
}

/// Destination exploration scale `rho_t = s sigma_t / sqrt(1 + sigma_t^2)`.
pub fn rho(scale: f64, sigma: f64) -> f64 {
    #[allow(unused_imports)]
    use num_traits::Float;
    scale * sigma / (1.0 + sigma * sigma).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_is_enforced() {
        let mut c = GuidanceConfig::with_family(Family::SampleCurrent);
        c.value = Some(ValueKind::Destination);
        assert!(matches!(c.validate(), Err(Error::InvalidConfiguration(_))));
        c.value = Some(ValueKind::Current);
        assert!(c.validate().is_ok());
        let mut d = GuidanceConfig::with_family(Family::SampleDestination);
        d.value = Some(ValueKind::Current);
        assert!(d.validate().is_err());
        let mut g = GuidanceConfig::with_family(Family::Gradient);
        g.value = Some(ValueKind::Destination);
        assert!(g.validate().is_err());
        let mut u = GuidanceConfig::with_family(Family::Unguided);
        u.value = Some(ValueKind::Current);
        assert!(u.validate().is_err());
    }

    #[test]
    fn positivity_and_window_checks() {
        let base = GuidanceConfig::default();
        assert!(base.validate().is_ok());
        assert!(GuidanceConfig { tau: 0.0, ..base.clone() }.validate().is_err());
        assert!(GuidanceConfig { n: 0, ..base.clone() }.validate().is_err());
        assert!(GuidanceConfig { n_iter: 0, ..base.clone() }.validate().is_err());
        assert!(GuidanceConfig { window: (0.6, 0.4), ..base.clone() }.validate().is_err());
        assert!(GuidanceConfig { window: (0.0, 1.5), ..base.clone() }.validate().is_err());
        assert!(GuidanceConfig { window: (0.25, 1.0), ..base }.guided_at(0.3));
    }

    #[test]
    fn gamma_ramp() {
        let g = GammaSchedule::Linear { start: 0.0, end: 4.0 };
        assert_eq!(g.at(0.25), 1.0);
        assert_eq!(GammaSchedule::Constant { value: 3.0 }.at(0.9), 3.0);
    }

    #[test]
    fn rho_limits() {
        assert_eq!(rho(1.0, 0.0), 0.0);
        assert!((rho(2.0, 1.0) - 2.0 / 2f64.sqrt()).abs() < 1e-15);
    }
}
