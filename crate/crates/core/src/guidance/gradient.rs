//! Gradient guidance.
//!
//! For discrete states the relaxed input is a `D x (S + 1)` row-stochastic
//! matrix whose last column is the mask state. The denoiser is extended
//! multilinearly over it, so at a hard `x_t` the partial derivative of the
//! prediction with respect to entry `(d, j)` is the prediction at the
//! neighbor with dimension `d` set to `j`. Gradients returned here are laid
//! out the same way, `D x (S + 1)` row-major.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::continuous::{vjp_finite_difference, ContinuousDenoiser};
use crate::discrete::{DiscreteDenoiser, Marginals, RateSpec, MASK};
use crate::objective::{one_hot, DifferentiablePredictor, Objective};
use crate::rng::{gumbel, standard_normal};
use crate::schedule::StepCoeffs;
use crate::{Error, Result};

use super::value::{mc_log_py, ValueEstimate};

/// Bound on `|gamma * ratio|` inside [`guided_rate`].
pub const EXPONENT_CLIP: f64 = 50.0;

/// Which rows of a discrete gradient to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientRows {
    All,
    /// Only masked dimensions; other rows are left at zero. Rates vanish on
    /// observed dimensions, so guidance never reads them.
    Masked,
}

/// Column of token `tok` in a `S + 1`-wide row.
fn column(tok: u8, states: usize) -> usize {
    if tok == MASK {
        states
    } else {
        tok as usize
    }
}

/// Denoiser predictions at every single-token neighbor of `tokens`, indexed
/// `d * (S + 1) + j`. The neighbor equal to `tokens` is `None` (use the
/// base prediction); off-support neighbors are all-zero rows.
fn neighbor_predictions<D: DiscreteDenoiser + ?Sized>(
    tokens: &[u8],
    step: usize,
    denoiser: &D,
    rows: GradientRows,
) -> Result<Vec<Option<Marginals>>> {
    let (dims, s) = (tokens.len(), denoiser.states());
    let mut out = vec![None; dims * (s + 1)];
    let mut probe = tokens.to_vec();
    for d in 0..dims {
        if rows == GradientRows::Masked && tokens[d] != MASK {
            continue;
        }
        for j in 0..=s {
            let tok = if j == s { MASK } else { j as u8 };
            if tok == tokens[d] {
                continue;
            }
            probe[d] = tok;
            out[d * (s + 1) + j] = Some(match denoiser.predict(&probe, step) {
                Ok(m) => m,
                Err(Error::OffSupport) => Marginals::new(dims, s, vec![0.0; dims * s])?,
                Err(e) => return Err(e),
            });
        }
        probe[d] = tokens[d];
    }
    Ok(out)
}

/// Chain a cotangent on the base prediction (`D x S`) through the
/// multilinear extension into a `D x (S + 1)` gradient.
fn pull_back(
    tokens: &[u8],
    cotangent: &[f64],
    base: &Marginals,
    neighbors: &[Option<Marginals>],
    rows: GradientRows,
) -> Vec<f64> {
    let (dims, s) = (base.dims(), base.states());
    let dot = |m: &Marginals| m.as_slice().iter().zip(cotangent).map(|(a, b)| a * b).sum::<f64>();
    let base_dot = dot(base);
    let mut grad = vec![0.0; dims * (s + 1)];
    for d in 0..dims {
        if rows == GradientRows::Masked && tokens[d] != MASK {
            continue;
        }
        for j in 0..=s {
            let idx = d * (s + 1) + j;
            grad[idx] = match &neighbors[idx] {
                Some(m) => dot(m),
                None => base_dot,
            };
        }
    }
    grad
}

/// Hard Gumbel-max sample and its tempered softmax relaxation,
/// `softmax((log u + g) / tau)`. Zero-probability entries are excluded.
pub fn gumbel_softmax(probs: &[f64], gumbels: &[f64], tau: f64) -> (usize, Vec<f64>) {
    let logits: Vec<f64> = probs
        .iter()
        .zip(gumbels)
        .map(|(&p, &g)| if p > 0.0 { (p.ln() + g) / tau } else { f64::NEG_INFINITY })
        .collect();
    let (hard, max) = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let mut soft: Vec<f64> = logits.iter().map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() }).collect();
    let total: f64 = soft.iter().sum();
    soft.iter_mut().for_each(|v| *v /= total);
    (hard, soft)
}

/// Straight-through Gumbel-softmax estimate of
/// `grad_{x_t} (1/N) sum_i f(x1_i)`, shape `D x (S + 1)`.
///
/// Forward: hard Gumbel-max draws of every masked dimension from the
/// denoiser at `x_t`. Backward: the predictor gradient at the hard sample is
/// copied onto the tempered softmax, differentiated through the softmax
/// into the denoiser probabilities and then through the multilinear
/// extension of the denoiser. Each sample draws `S` Gumbels per masked
/// dimension.
#[allow(clippy::too_many_arguments)]
pub fn st_gumbel_gradient<D, P, R>(
    tokens: &[u8],
    step: usize,
    denoiser: &D,
    predictor: &P,
    n: usize,
    tau: f64,
    rows: GradientRows,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    D: DiscreteDenoiser + ?Sized,
    P: DifferentiablePredictor + ?Sized,
    R: Rng + ?Sized,
{
    st_gumbel_gradient_with_base(tokens, step, denoiser, predictor, n, tau, rows, rng).map(|(g, _)| g)
}

/// [`st_gumbel_gradient`] that also returns the prediction at `x_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn st_gumbel_gradient_with_base<D, P, R>(
    tokens: &[u8],
    step: usize,
    denoiser: &D,
    predictor: &P,
    n: usize,
    tau: f64,
    rows: GradientRows,
    rng: &mut R,
) -> Result<(Vec<f64>, Marginals)>
where
    D: DiscreteDenoiser + ?Sized,
    P: DifferentiablePredictor + ?Sized,
    R: Rng + ?Sized,
{
    if !(tau > 0.0) {
        return Err(Error::arg("tau must be positive"));
    }
    if n == 0 {
        return Err(Error::arg("n must be >= 1"));
    }
    let base = denoiser.predict(tokens, step)?;
    let (dims, s) = (tokens.len(), denoiser.states());
    let masked: Vec<usize> = (0..dims).filter(|&d| tokens[d] == MASK).collect();
    let mut cot = vec![0.0; dims * s];
    let mut hard = tokens.to_vec();
    let mut softs: Vec<Vec<f64>> = vec![Vec::new(); dims];
    let mut g = vec![0.0; s];
    for _ in 0..n {
        for &e in &masked {
            g.iter_mut().for_each(|v| *v = gumbel(rng));
            let (h, soft) = gumbel_softmax(base.row(e), &g, tau);
            hard[e] = h as u8;
            softs[e] = soft;
        }
        let gf = predictor.gradient(&one_hot(&hard, s));
        for &e in &masked {
            let soft = &softs[e];
            let row_g = &gf[e * s..(e + 1) * s];
            let mean: f64 = row_g.iter().zip(soft).map(|(a, b)| a * b).sum();
            let u = base.row(e);
            for k in 0..s {
                if u[k] > 0.0 {
                    cot[e * s + k] += soft[k] * (row_g[k] - mean) / (tau * u[k]);
                }
            }
        }
    }
    cot.iter_mut().for_each(|v| *v /= n as f64);
    let neighbors = neighbor_predictions(tokens, step, denoiser, rows)?;
    let grad = pull_back(tokens, &cot, &base, &neighbors, rows);
    Ok((grad, base))
}

/// Exact `grad_{x_t} E_{x1 ~ u(x_t)}[f(x1)]` through the multilinear
/// extension, shape `D x (S + 1)`. Enumerates the product support.
pub fn expectation_gradient<D, F>(tokens: &[u8], step: usize, denoiser: &D, f: F) -> Result<Vec<f64>>
where
    D: DiscreteDenoiser + ?Sized,
    F: Fn(&[u8]) -> f64,
{
    let base = denoiser.predict(tokens, step)?;
    let (_, partials) = base.expect_with_partials(f);
    let neighbors = neighbor_predictions(tokens, step, denoiser, GradientRows::All)?;
    Ok(pull_back(tokens, &partials, &base, &neighbors, GradientRows::All))
}

/// First-order log-ratios `(x^{d <- j} - x_t) . grad`, shape `D x S`:
/// entry `(d, j)` is `grad[d, j] - grad[d, x_t^d]`.
pub fn taylor_ratios(tokens: &[u8], grad: &[f64], states: usize) -> Result<Vec<f64>> {
    let w = states + 1;
    if grad.len() != tokens.len() * w {
        return Err(Error::arg("gradient must be D x (S + 1)"));
    }
    let mut out = vec![0.0; tokens.len() * states];
    for (d, &tok) in tokens.iter().enumerate() {
        let here = grad[d * w + column(tok, states)];
        for j in 0..states {
            out[d * states + j] = grad[d * w + j] - here;
        }
    }
    Ok(out)
}

/// Log-ratios from value differences at every single-token neighbor,
/// shape `D x S`: entry `(d, j)` is `V(x_t with d <- j) - V(x_t)`.
///
/// Monte-Carlo values reuse one stream for every neighbor (common random
/// numbers), so `j = x_t^d` gives exactly 0. Off-support neighbors get 0.
pub fn exact_ratios<D, O, R>(
    tokens: &[u8],
    step: usize,
    denoiser: &D,
    objective: &O,
    estimate: ValueEstimate,
    stream: &R,
) -> Result<Vec<f64>>
where
    D: DiscreteDenoiser + ?Sized,
    O: Objective<[u8]> + ?Sized,
    R: Rng + Clone,
{
    exact_ratios_with_base(tokens, step, denoiser, objective, estimate, stream).map(|(r, _)| r)
}

/// [`exact_ratios`] that also returns the prediction at `x_t`. Always
/// evaluates `1 + D S` values, including the trivial neighbors.
pub(crate) fn exact_ratios_with_base<D, O, R>(
    tokens: &[u8],
    step: usize,
    denoiser: &D,
    objective: &O,
    estimate: ValueEstimate,
    stream: &R,
) -> Result<(Vec<f64>, Marginals)>
where
    D: DiscreteDenoiser + ?Sized,
    O: Objective<[u8]> + ?Sized,
    R: Rng + Clone,
{
    let s = denoiser.states();
    let value_of = |m: &Marginals| match estimate {
        ValueEstimate::MonteCarlo(n) => mc_log_py(m, objective, n, &mut stream.clone()),
        ValueEstimate::Exact => m.expect(|x| objective.score(x)),
    };
    let base_pred = denoiser.predict(tokens, step)?;
    let base = value_of(&base_pred);
    let mut out = vec![0.0; tokens.len() * s];
    let mut probe = tokens.to_vec();
    for d in 0..tokens.len() {
        for j in 0..s {
            probe[d] = j as u8;
            match denoiser.predict(&probe, step) {
                Ok(m) => out[d * s + j] = value_of(&m) - base,
                Err(Error::OffSupport) => {}
                Err(e) => return Err(e),
            }
        }
        probe[d] = tokens[d];
    }
    Ok((out, base_pred))
}

/// `R'(d, j) = exp(clip(gamma ratio[d, j])) R(d, j)`, with the exponent
/// clipped to `[-EXPONENT_CLIP, EXPONENT_CLIP]`.
pub fn guided_rate(rates: &RateSpec, ratios: &[f64], gamma: f64) -> Result<RateSpec> {
    let s = rates.states();
    if ratios.len() != rates.dims() * s {
        return Err(Error::arg("ratios must be D x S"));
    }
    let mut out = rates.clone();
    if gamma == 0.0 {
        return Ok(out);
    }
    for (d, row) in out.rows_mut() {
        for (j, r) in row.iter_mut().enumerate() {
            let e = (gamma * ratios[d * s + j]).clamp(-EXPONENT_CLIP, EXPONENT_CLIP);
            *r *= e.exp();
        }
    }
    Ok(out)
}

/// `u(x_t)` and `g = grad_{x_t} f(u(x_t))`, using the denoiser's
/// vector-Jacobian product when it has one and central differences
/// otherwise.
pub fn continuous_guidance_gradient<D, P>(x: &[f64], step: usize, denoiser: &D, predictor: &P) -> (Vec<f64>, Vec<f64>)
where
    D: ContinuousDenoiser + ?Sized,
    P: DifferentiablePredictor + ?Sized,
{
    let x1_hat = denoiser.predict_x1(x, step);
    let outer = predictor.gradient(&x1_hat);
    let g = denoiser
        .vjp(x, step, &outer)
        .unwrap_or_else(|| vjp_finite_difference(denoiser, x, step, &outer));
    (x1_hat, g)
}

/// `gamma g + c1 x + c2 x1_hat + sigma eps`.
pub fn gradient_step_continuous<R: Rng + ?Sized>(
    x: &[f64],
    x1_hat: &[f64],
    g: &[f64],
    coeffs: &StepCoeffs,
    gamma: f64,
    rng: &mut R,
) -> Vec<f64> {
    x.iter()
        .zip(x1_hat)
        .zip(g)
        .map(|((xt, xh), gi)| gamma * gi + coeffs.c1 * xt + coeffs.c2 * xh + coeffs.sigma * standard_normal(rng))
        .collect()
}
