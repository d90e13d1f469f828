use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::continuous::norm;
use crate::discrete::{destination_rate, euler_step, Marginals};
use crate::objective::Objective;
use crate::rng::standard_normal;
use crate::schedule::StepCoeffs;
use crate::Result;

/// A proposal steered toward a sampled clean destination.
#[derive(Debug, Clone, PartialEq)]
pub struct DestinationDraw<X> {
    pub next: X,
    pub destination: X,
    /// Objective on the destination.
    pub value: f64,
    /// Objective evaluations spent.
    pub evaluations: usize,
}

/// Keep-best search around `x1_hat = u(x_t)` followed by a step toward the
/// kept destination.
///
/// Each of `n_iter` rounds draws `k` perturbations `x + rho xi` of the
/// incumbent and keeps the best one if it scores at least as well; the
/// incumbent starts at `x1_hat` with its own score, so the returned
/// destination never scores below `x1_hat`. Without `dsg` the step is the
/// posterior draw `c1 x_t + c2 x_dest + sigma eps`; with `dsg` it is
/// `c1 x_t + c2 x1_hat + sigma sqrt(D) dir / |dir|` for `dir = x_dest - x1_hat`,
/// falling back to Gaussian noise when `dir` vanishes.
#[allow(clippy::too_many_arguments)]
pub fn branch_out_destination_continuous<O, R>(
    x: &[f64],
    x1_hat: &[f64],
    coeffs: &StepCoeffs,
    rho: f64,
    k: usize,
    n_iter: usize,
    dsg: bool,
    objective: &O,
    rng: &mut R,
) -> DestinationDraw<Vec<f64>>
where
    O: Objective<[f64]> + ?Sized,
    R: Rng + ?Sized,
{
    let mut best = x1_hat.to_vec();
    let mut best_value = objective.score(&best);
    let mut evaluations = 1;
    let mut probe = best.clone();
    for _ in 0..n_iter {
        let mut round: Option<(Vec<f64>, f64)> = None;
        for _ in 0..k {
            for (p, b) in probe.iter_mut().zip(&best) {
                *p = b + rho * standard_normal(rng);
            }
            let v = objective.score(&probe);
            evaluations += 1;
            if round.as_ref().is_none_or(|(_, rv)| v > *rv) {
                round = Some((probe.clone(), v));
            }
        }
        if let Some((cand, v)) = round {
            if v >= best_value {
                best = cand;
                best_value = v;
            }
        }
    }

    let mut next: Vec<f64> = x.iter().zip(x1_hat).map(|(a, b)| coeffs.c1 * a + coeffs.c2 * b).collect();
    let dir: Vec<f64> = best.iter().zip(x1_hat).map(|(a, b)| a - b).collect();
    let len = norm(&dir);
    if dsg && len > 0.0 {
        let scale = coeffs.sigma * (x.len() as f64).sqrt() / len;
        for (n, d) in next.iter_mut().zip(&dir) {
            *n += scale * d;
        }
    } else {
        let target = if dsg { x1_hat } else { &best[..] };
        for ((n, xt), b) in next.iter_mut().zip(x).zip(target) {
            *n = coeffs.c1 * xt + coeffs.c2 * b + coeffs.sigma * standard_normal(rng);
        }
    }
    DestinationDraw { next, destination: best, value: best_value, evaluations }
}

/// Draw a clean destination from the denoiser marginals and take one Euler
/// step of the destination-conditioned flow.
pub fn branch_out_destination_discrete<O, R>(
    tokens: &[u8],
    marginals: &Marginals,
    t: f64,
    dt: f64,
    objective: &O,
    rng: &mut R,
) -> Result<DestinationDraw<Vec<u8>>>
where
    O: Objective<[u8]> + ?Sized,
    R: Rng + ?Sized,
{
    let destination = marginals.sample_clean(tokens, rng);
    let rates = destination_rate(tokens, &destination, marginals.states(), t)?;
    let next = euler_step(tokens, &rates, dt, rng)?;
    let value = objective.score(&destination);
    Ok(DestinationDraw { next, destination, value, evaluations: 1 })
}
