//! Continuous-state DDPM sampling with an analytic Gaussian-mixture denoiser.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::rng::{normal_vec, standard_normal};
use crate::schedule::{NoiseSchedule, StepCoeffs};
use crate::{Error, Result};

/// A point on the continuous inference path at grid index `step`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContinuousState {
    pub x: Vec<f64>,
    pub step: usize,
}

impl ContinuousState {
    pub fn new(x: Vec<f64>, step: usize) -> Self {
        ContinuousState { x, step }
    }

    /// A draw from the prior `N(0, I)` at `t = 0`.
    pub fn noise<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        ContinuousState { x: normal_vec(rng, dim), step: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }
}

/// Predicts the clean sample `E[x1 | x_t]`.
pub trait ContinuousDenoiser: Send + Sync {
    fn dim(&self) -> usize;

    fn predict_x1(&self, x: &[f64], step: usize) -> Vec<f64>;

    /// Vector-Jacobian product `cotangent^T d predict_x1 / dx`, when the
    /// denoiser exposes sensitivities.
    fn vjp(&self, _x: &[f64], _step: usize, _cotangent: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Central finite-difference fallback for [`ContinuousDenoiser::vjp`], with
/// step `1e-5 * |x| + 1e-8`.
pub fn vjp_finite_difference<D: ContinuousDenoiser + ?Sized>(
    denoiser: &D,
    x: &[f64],
    step: usize,
    cotangent: &[f64],
) -> Vec<f64> {
    let h = 1e-5 * norm(x) + 1e-8;
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|e| {
            probe[e] = x[e] + h;
            let up = denoiser.predict_x1(&probe, step);
            probe[e] = x[e] - h;
            let down = denoiser.predict_x1(&probe, step);
            probe[e] = x[e];
            cotangent
                .iter()
                .zip(up.iter().zip(&down))
                .map(|(g, (a, b))| g * (a - b))
                .sum::<f64>()
                / (2.0 * h)
        })
        .collect()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Diagonal-covariance Gaussian mixture used as the data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    /// Row-major `components x dim`.
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::arg("mixture needs matching, non-empty weights/means/variances"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().chain(&variances).any(|r| r.len() != dim) {
            return Err(Error::arg("mixture rows must share one positive dimension"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::arg("mixture weights must be nonnegative"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::arg("mixture weights must sum to 1"));
        }
        if variances.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::arg("mixture variances must be positive"));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::arg("mixture means must be finite"));
        }
        Ok(GaussianMixture {
            dim,
            weights,
            means: means.concat(),
            variances: variances.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = crate::rng::categorical(rng, &self.weights);
        self.mean(k)
            .iter()
            .zip(self.variance(k))
            .map(|(m, v)| m + v.sqrt() * standard_normal(rng))
            .collect()
    }

    /// `E[x1 | x_t]` when `x_t = sqrt(ab) x1 + sqrt(1 - ab) eps`.
    pub fn posterior_mean(&self, x: &[f64], alpha_bar: f64) -> Vec<f64> {
        if alpha_bar >= 1.0 {
            return x.to_vec();
        }
        let parts = self.posterior_parts(x, alpha_bar);
        let mut out = vec![0.0; self.dim];
        for (k, r) in parts.resp.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(&parts.comp_means[k * self.dim..]) {
                *o += r * m;
            }
        }
        out
    }

    /// `cotangent^T J` where `J` is the Jacobian of [`Self::posterior_mean`].
    pub fn posterior_mean_vjp(&self, x: &[f64], alpha_bar: f64, cotangent: &[f64]) -> Vec<f64> {
        if alpha_bar >= 1.0 {
            return cotangent.to_vec();
        }
        let d = self.dim;
        let sa = alpha_bar.sqrt();
        let parts = self.posterior_parts(x, alpha_bar);
        let mut out = vec![0.0; d];
        // responsibility-weighted score, sum_k r_k l_k
        let mut score_bar = vec![0.0; d];
        for (k, r) in parts.resp.iter().enumerate() {
            for e in 0..d {
                score_bar[e] += r * parts.score[k * d + e];
            }
        }
        for (k, r) in parts.resp.iter().enumerate() {
            let var = self.variance(k);
            let dot: f64 = cotangent.iter().zip(&parts.comp_means[k * d..(k + 1) * d]).map(|(g, m)| g * m).sum();
            for e in 0..d {
                let s = alpha_bar * var[e] + 1.0 - alpha_bar;
                out[e] += r * (cotangent[e] * sa * var[e] / s + (parts.score[k * d + e] - score_bar[e]) * dot);
            }
        }
        out
    }

    fn posterior_parts(&self, x: &[f64], alpha_bar: f64) -> PosteriorParts {
        let d = self.dim;
        let sa = alpha_bar.sqrt();
        let noise = 1.0 - alpha_bar;
        let k = self.components();
        let mut log_r = Vec::with_capacity(k);
        let mut comp_means = Vec::with_capacity(k * d);
        let mut score = Vec::with_capacity(k * d);
        for c in 0..k {
            let mu = self.mean(c);
            let var = self.variance(c);
            let mut lr = self.weights[c].ln();
            for e in 0..d {
                let s = alpha_bar * var[e] + noise;
                let resid = x[e] - sa * mu[e];
                lr -= 0.5 * (s.ln() + resid * resid / s);
                comp_means.push(mu[e] + sa * var[e] / s * resid);
                score.push(-resid / s);
            }
            log_r.push(lr);
        }
        let max = log_r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_r.iter().map(|l| (l - max).exp()).sum();
        let resp = log_r.iter().map(|l| (l - max).exp() / total).collect();
        PosteriorParts { resp, comp_means, score }
    }
}

struct PosteriorParts {
    resp: Vec<f64>,
    comp_means: Vec<f64>,
    /// d log N(x; sqrt(ab) mu_k, s_k) / dx, row-major `components x dim`.
    score: Vec<f64>,
}

/// The exact denoiser `E[x1 | x_t]` for Gaussian-mixture data.
#[derive(Debug, Clone)]
pub struct GmmDenoiser {
    pub mixture: GaussianMixture,
    pub schedule: NoiseSchedule,
}

impl GmmDenoiser {
    pub fn new(mixture: GaussianMixture, schedule: NoiseSchedule) -> Self {
        GmmDenoiser { mixture, schedule }
    }
}

impl ContinuousDenoiser for GmmDenoiser {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn predict_x1(&self, x: &[f64], step: usize) -> Vec<f64> {
        self.mixture.posterior_mean(x, self.schedule.alpha_bar(step))
    }

    fn vjp(&self, x: &[f64], step: usize, cotangent: &[f64]) -> Option<Vec<f64>> {
        Some(self.mixture.posterior_mean_vjp(x, self.schedule.alpha_bar(step), cotangent))
    }
}

/// `x_t = sqrt(ab_t) x1 + sqrt(1 - ab_t) eps`.
pub fn corrupt_continuous<R: Rng + ?Sized>(
    x1: &[f64],
    step: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<ContinuousState> {
    if step > schedule.steps() {
        return Err(Error::arg("time index beyond the grid"));
    }
    if x1.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("clean sample must be finite"));
    }
    let ab = schedule.alpha_bar(step);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let x = x1.iter().map(|v| a * v + b * standard_normal(rng)).collect();
    Ok(ContinuousState { x, step })
}

/// `c1 x + c2 x1_hat + sigma eps`.
pub fn ddpm_transition<R: Rng + ?Sized>(x: &[f64], x1_hat: &[f64], coeffs: &StepCoeffs, rng: &mut R) -> Vec<f64> {
    gaussian_transition(x, x1_hat, coeffs, coeffs.sigma, rng)
}

/// `N(c1 x + c2 x1, beta I)`, the posterior `x_{t+dt} | x_t, x1`.
pub fn posterior_transition<R: Rng + ?Sized>(x: &[f64], x1: &[f64], coeffs: &StepCoeffs, rng: &mut R) -> Vec<f64> {
    gaussian_transition(x, x1, coeffs, coeffs.beta.sqrt(), rng)
}

fn gaussian_transition<R: Rng + ?Sized>(x: &[f64], x1: &[f64], coeffs: &StepCoeffs, scale: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .zip(x1)
        .map(|(xt, x1)| coeffs.c1 * xt + coeffs.c2 * x1 + scale * standard_normal(rng))
        .collect()
}

pub fn ddpm_step<D: ContinuousDenoiser + ?Sized, R: Rng + ?Sized>(
    state: &ContinuousState,
    denoiser: &D,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<ContinuousState> {
    let coeffs = schedule.coeffs(state.step)?;
    let x1_hat = denoiser.predict_x1(&state.x, state.step);
    Ok(ContinuousState {
        x: ddpm_transition(&state.x, &x1_hat, &coeffs, rng),
        step: state.step + 1,
    })
}

pub fn posterior_step<R: Rng + ?Sized>(
    state: &ContinuousState,
    x1: &[f64],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<ContinuousState> {
    let coeffs = schedule.coeffs(state.step)?;
    Ok(ContinuousState {
        x: posterior_transition(&state.x, x1, &coeffs, rng),
        step: state.step + 1,
    })
}

/// Draw `x1_hat ~ N(u(x_t), (1 - alpha) I)` and then take a posterior step
/// towards it.
pub fn two_stage_step<D: ContinuousDenoiser + ?Sized, R: Rng + ?Sized>(
    state: &ContinuousState,
    denoiser: &D,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<ContinuousState> {
    let coeffs = schedule.coeffs(state.step)?;
    let spread = (1.0 - coeffs.alpha).sqrt();
    let x1_hat: Vec<f64> = denoiser
        .predict_x1(&state.x, state.step)
        .into_iter()
        .map(|m| m + spread * standard_normal(rng))
        .collect();
    posterior_step(state, &x1_hat, schedule, rng)
}

/// Closed-form moments of [`two_stage_step`] given `u(x_t)`: the mean
/// `c1 x + c2 u` (shared with [`ddpm_step`]) and the per-coordinate variance
/// `c2^2 (1 - alpha) + beta`. The DDPM step variance is `sigma^2 = 1 - alpha`.
pub fn two_stage_moments(x: &[f64], x1_hat: &[f64], coeffs: &StepCoeffs) -> (Vec<f64>, f64) {
    let mean = x.iter().zip(x1_hat).map(|(a, b)| coeffs.c1 * a + coeffs.c2 * b).collect();
    (mean, coeffs.c2 * coeffs.c2 * (1.0 - coeffs.alpha) + coeffs.beta)
}

/// `var(two_stage) - sigma^2` for one grid step.
pub fn two_stage_variance_gap(coeffs: &StepCoeffs) -> f64 {
    coeffs.c2 * coeffs.c2 * (1.0 - coeffs.alpha) + coeffs.beta - coeffs.sigma * coeffs.sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Streams};
    use crate::schedule::ScheduleKind;

    fn rng(k: u64) -> crate::rng::StreamRng {
        Streams::new(11).derive(Purpose::Aux, k, 0, 0)
    }

    fn two_bumps() -> GaussianMixture {
        GaussianMixture::new(vec![0.5, 0.5], vec![vec![1.0], vec![-1.0]], vec![vec![0.1], vec![0.1]]).unwrap()
    }

    #[test]
    fn mixture_validation() {
        assert!(GaussianMixture::new(vec![0.6, 0.5], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 1.0]], vec![vec![1.0]]).is_err());
        assert!(GaussianMixture::new(vec![-0.5, 1.5], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn symmetric_mixture_at_origin() {
        let g = two_bumps();
        for ab in [1e-4, 0.3, 0.9, 0.999] {
            assert!(g.posterior_mean(&[0.0], ab)[0].abs() < 1e-15);
        }
    }

    #[test]
    fn point_mass_component() {
        let g = GaussianMixture::new(vec![1.0], vec![vec![2.0, -3.0]], vec![vec![1e-14, 1e-14]]).unwrap();
        let out = g.posterior_mean(&[10.0, 10.0], 0.5);
        assert!((out[0] - 2.0).abs() < 1e-9 && (out[1] + 3.0).abs() < 1e-9, "{out:?}");
    }

    #[test]
    fn clean_time_is_identity() {
        let g = two_bumps();
        assert_eq!(g.posterior_mean(&[0.123], 1.0), vec![0.123]);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let g = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![1.0, -0.5, 0.2], vec![-1.0, 0.5, 0.0]],
            vec![vec![0.2, 0.5, 1.0], vec![0.3, 0.1, 2.0]],
        )
        .unwrap();
        let s = NoiseSchedule::new(ScheduleKind::Cosine, 50).unwrap();
        let den = GmmDenoiser::new(g, s);
        let x = [0.3, -0.2, 0.9];
        let cot = [1.0, -2.0, 0.5];
        for step in [5, 25, 45] {
            let exact = den.vjp(&x, step, &cot).unwrap();
            let fd = vjp_finite_difference(&den, &x, step, &cot);
            for (a, b) in exact.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()), "step {step}: {exact:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn degenerate_step_is_identity() {
        let c = StepCoeffs::from_alpha_bars(0.4, 0.4);
        let x = [1.5, -2.0];
        assert_eq!(ddpm_transition(&x, &[9.0, 9.0], &c, &mut rng(0)), x.to_vec());
    }

    #[test]
    fn zero_noise_step_is_affine() {
        let mut c = StepCoeffs::from_alpha_bars(0.2, 0.6);
        c.sigma = 0.0;
        let out = ddpm_transition(&[1.0, 2.0], &[3.0, 3.0], &c, &mut rng(1));
        assert_eq!(out, vec![c.c1 * 1.0 + c.c2 * 3.0, c.c1 * 2.0 + c.c2 * 3.0]);
    }

    #[test]
    fn zero_variance_posterior_step() {
        let mut c = StepCoeffs::from_alpha_bars(0.2, 0.6);
        c.beta = 0.0;
        let out = posterior_transition(&[1.0], &[-1.0], &c, &mut rng(2));
        assert_eq!(out, vec![c.c1 - c.c2]);
    }

    #[test]
    fn clean_time_corruption_is_exact() {
        let s = NoiseSchedule::new(ScheduleKind::LinearAlphabar, 10).unwrap();
        let st = corrupt_continuous(&[0.5, -0.25], 10, &s, &mut rng(3)).unwrap();
        assert_eq!(st.x, vec![0.5, -0.25]);
    }

    #[test]
    fn steps_fail_at_clean_time() {
        let s = NoiseSchedule::new(ScheduleKind::LinearAlphabar, 10).unwrap();
        let den = GmmDenoiser::new(two_bumps(), s.clone());
        let st = ContinuousState::new(vec![0.0], 10);
        assert!(ddpm_step(&st, &den, &s, &mut rng(4)).is_err());
        assert!(posterior_step(&st, &[0.0], &s, &mut rng(4)).is_err());
    }

    #[test]
    fn noiseless_rollout_settles_in_the_starting_basin() {
        let s = NoiseSchedule::new(ScheduleKind::Cosine, 200).unwrap();
        let den = GmmDenoiser::new(two_bumps(), s.clone());
        for start in [0.3, -0.3] {
            let mut x = vec![start];
            let mut last_move = f64::INFINITY;
            for i in 0..200 {
                let mut c = s.coeffs(i).unwrap();
                c.sigma = 0.0;
                let pred = den.predict_x1(&x, i);
                let next = ddpm_transition(&x, &pred, &c, &mut rng(5));
                assert!(next[0].is_finite());
                last_move = (next[0] - x[0]).abs();
                x = next;
            }
            assert!(x[0] * start > 0.0 && x[0].abs() < 1.0, "ended at {}", x[0]);
            assert!(last_move < 1e-2, "still moving by {last_move}");
        }
    }
}
