use alloc::vec::Vec;
use rand::Rng;

use crate::continuous::{ContinuousDenoiser, ContinuousState};
use crate::discrete::{DiscreteDenoiser, DiscreteSequence, Marginals};
use crate::objective::Objective;
use crate::rng::{pick, uniform};
use crate::Result;

/// How `E_{x1 ~ u}[f(x1)]` is computed for discrete states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueEstimate {
    /// Average over `n` independent draws.
    MonteCarlo(usize),
    /// Enumerate the product support of the marginals.
    Exact,
}

/// `(1/N) sum_i f(x1_i)` with `x1_i` drawn per dimension from `marginals`;
/// `n` must be at least 1.
///
/// Every sample consumes exactly one uniform per dimension, observed or not,
/// so two calls sharing a stream see the same noise even when their masking
/// patterns differ.
pub fn mc_log_py<O, R>(marginals: &Marginals, objective: &O, n: usize, rng: &mut R) -> f64
where
    O: Objective<[u8]> + ?Sized,
    R: Rng + ?Sized,
{
    debug_assert!(n > 0);
    let dims = marginals.dims();
    let mut x: Vec<u8> = alloc::vec![0; dims];
    let mut total = 0.0;
    for _ in 0..n {
        for (d, slot) in x.iter_mut().enumerate() {
            *slot = pick(marginals.row(d), uniform(rng)) as u8;
        }
        total += objective.score(&x);
    }
    total / n as f64
}

/// Lookahead value of a continuous state: `f(u(x_t))`.
pub fn value_current_continuous<D, O>(state: &ContinuousState, denoiser: &D, objective: &O) -> f64
where
    D: ContinuousDenoiser + ?Sized,
    O: Objective<[f64]> + ?Sized,
{
    objective.score(&denoiser.predict_x1(&state.x, state.step))
}

/// Lookahead value of a discrete state: `E_{x1 ~ u(x_t)}[f(x1)]`, estimated
/// or enumerated.
pub fn value_current_discrete<D, O, R>(
    state: &DiscreteSequence,
    denoiser: &D,
    objective: &O,
    estimate: ValueEstimate,
    rng: &mut R,
) -> Result<f64>
where
    D: DiscreteDenoiser + ?Sized,
    O: Objective<[u8]> + ?Sized,
    R: Rng + ?Sized,
{
    let marginals = denoiser.predict(&state.tokens, state.step)?;
    Ok(match estimate {
        ValueEstimate::MonteCarlo(n) => mc_log_py(&marginals, objective, n, rng),
        ValueEstimate::Exact => marginals.expect(|x| objective.score(x)),
    })
}
