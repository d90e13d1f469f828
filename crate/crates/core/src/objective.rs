//! Scores on clean samples and differentiable surrogates for gradient
//! guidance.
//!
//! Discrete predictors take a relaxed input: a row-major `D x S`
//! row-stochastic matrix, with one-hot rows for hard sequences.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::rng::standard_normal;
use crate::{Error, Result};

/// A score `f_y(x)` on clean samples; higher is better.
pub trait Objective<X: ?Sized>: Send + Sync {
    fn score(&self, x: &X) -> f64;

    /// Task-level error reported alongside the score: `|y - rule(x)|` for
    /// rule objectives, `1 - p(y | x)` for classifiers.
    fn abs_error(&self, x: &X) -> f64;
}

/// A scalar feature extracted from a clean sample.
pub trait Rule<X: ?Sized>: Send + Sync {
    fn feature(&self, x: &X) -> f64;
}

/// Number of coordinates strictly above `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountAbove {
    pub epsilon: f64,
}

impl Rule<[f64]> for CountAbove {
    fn feature(&self, x: &[f64]) -> f64 {
        x.iter().filter(|&&v| v > self.epsilon).count() as f64
    }
}

/// Multiplicity of `token` in the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenCount {
    pub token: u8,
}

impl Rule<[u8]> for TokenCount {
    fn feature(&self, x: &[u8]) -> f64 {
        x.iter().filter(|&&t| t == self.token).count() as f64
    }
}

/// `f_y(x) = -scale * (y - rule(x))^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleObjective<R> {
    pub rule: R,
    pub target: f64,
    scale: f64,
}

impl<R> RuleObjective<R> {
    /// Plain squared loss, `-(y - rule(x))^2`.
    pub fn squared(rule: R, target: f64) -> Self {
        RuleObjective { rule, target, scale: 1.0 }
    }

    /// Gaussian log-likelihood form, `-(y - rule(x))^2 / (2 sigma^2)`.
    pub fn gaussian(rule: R, target: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::arg("sigma must be positive"));
        }
        Ok(RuleObjective { rule, target, scale: 0.5 / (sigma * sigma) })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl<X: ?Sized, R: Rule<X>> Objective<X> for RuleObjective<R> {
    fn score(&self, x: &X) -> f64 {
        let r = self.target - self.rule.feature(x);
        -self.scale * r * r
    }

    fn abs_error(&self, x: &X) -> f64 {
        (self.target - self.rule.feature(x)).abs()
    }
}

/// `f_y(x) = -(y - f(x))^2 / (2 sigma^2)` for an arbitrary feature map.
pub fn gaussian_regression<X: ?Sized, F>(f: F, target: f64, sigma: f64) -> Result<RuleObjective<FnRule<F>>>
where
    F: Fn(&X) -> f64 + Send + Sync,
{
    RuleObjective::gaussian(FnRule(f), target, sigma)
}

/// Adapts a closure into a [`Rule`].
#[derive(Debug, Clone, Copy)]
pub struct FnRule<F>(pub F);

impl<X: ?Sized, F: Fn(&X) -> f64 + Send + Sync> Rule<X> for FnRule<F> {
    fn feature(&self, x: &X) -> f64 {
        (self.0)(x)
    }
}

/// Log-probability of the target class, stored as a table over `[S]^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularClassifier {
    dims: usize,
    states: usize,
    log_probs: Vec<f64>,
}

impl TabularClassifier {
    pub fn new(dims: usize, states: usize, log_probs: Vec<f64>) -> Result<Self> {
        let size = states.checked_pow(dims as u32).ok_or_else(|| Error::arg("table too large"))?;
        if log_probs.len() != size {
            return Err(Error::arg("classifier table length must be S^D"));
        }
        if log_probs.iter().any(|l| !(*l <= 0.0) || !l.is_finite()) {
            return Err(Error::arg("log-probabilities must be finite and <= 0"));
        }
        Ok(TabularClassifier { dims, states, log_probs })
    }

    /// `log sigmoid(score)` with `score = bias + sum_d unary[d, x_d] +
    /// sum_d pair[d, x_d, x_{d+1}]`.
    pub fn pairwise(dims: usize, states: usize, bias: f64, unary: &[f64], pair: &[f64]) -> Result<Self> {
        if unary.len() != dims * states || pair.len() != dims.saturating_sub(1) * states * states {
            return Err(Error::arg("unary must be D x S and pair (D-1) x S x S"));
        }
        let size = states.checked_pow(dims as u32).ok_or_else(|| Error::arg("table too large"))?;
        let mut x = vec![0usize; dims];
        let mut log_probs = Vec::with_capacity(size);
        for mut i in 0..size {
            for slot in x.iter_mut().rev() {
                *slot = i % states;
                i /= states;
            }
            let mut score = bias;
            for d in 0..dims {
                score += unary[d * states + x[d]];
                if d + 1 < dims {
                    score += pair[(d * states + x[d]) * states + x[d + 1]];
                }
            }
            log_probs.push(log_sigmoid(score));
        }
        TabularClassifier::new(dims, states, log_probs)
    }

    /// Pairwise classifier with standard-normal weights scaled by `scale`
    /// and the given bias.
    pub fn random<R: Rng + ?Sized>(dims: usize, states: usize, bias: f64, scale: f64, rng: &mut R) -> Result<Self> {
        let unary: Vec<f64> = (0..dims * states).map(|_| scale * standard_normal(rng)).collect();
        let pair: Vec<f64> = (0..dims.saturating_sub(1) * states * states)
            .map(|_| scale * standard_normal(rng))
            .collect();
        TabularClassifier::pairwise(dims, states, bias, &unary, &pair)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    fn index_of(&self, x: &[u8]) -> usize {
        x.iter().fold(0, |acc, &t| acc * self.states + t as usize)
    }
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

impl Objective<[u8]> for TabularClassifier {
    fn score(&self, x: &[u8]) -> f64 {
        self.log_probs[self.index_of(x)]
    }

    fn abs_error(&self, x: &[u8]) -> f64 {
        1.0 - self.score(x).exp()
    }
}

/// A scalar function of a real input with an exact gradient.
pub trait DifferentiablePredictor: Send + Sync {
    fn input_len(&self) -> usize;
    fn value(&self, input: &[f64]) -> f64;
    fn gradient(&self, input: &[f64]) -> Vec<f64>;
}

/// Central finite-difference gradient with step `1e-4 * max(1, |input|_inf)`.
pub fn finite_difference_gradient<P: DifferentiablePredictor + ?Sized>(p: &P, input: &[f64]) -> Vec<f64> {
    let h = 1e-4 * input.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut probe = input.to_vec();
    (0..input.len())
        .map(|i| {
            probe[i] = input[i] + h;
            let up = p.value(&probe);
            probe[i] = input[i] - h;
            let down = p.value(&probe);
            probe[i] = input[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Row-major one-hot encoding of a hard sequence.
pub fn one_hot(tokens: &[u8], states: usize) -> Vec<f64> {
    let mut out = vec![0.0; tokens.len() * states];
    for (d, &t) in tokens.iter().enumerate() {
        out[d * states + t as usize] = 1.0;
    }
    out
}

/// Evaluates a discrete predictor on a hard sequence.
pub fn predict_hard<P: DifferentiablePredictor + ?Sized>(p: &P, tokens: &[u8], states: usize) -> f64 {
    p.value(&one_hot(tokens, states))
}

/// Wraps a discrete predictor as an [`Objective`] on hard sequences.
#[derive(Debug, Clone)]
pub struct PredictorObjective<P> {
    pub predictor: P,
    pub states: usize,
}

impl<P: DifferentiablePredictor> Objective<[u8]> for PredictorObjective<P> {
    fn score(&self, x: &[u8]) -> f64 {
        predict_hard(&self.predictor, x, self.states)
    }

    fn abs_error(&self, x: &[u8]) -> f64 {
        self.score(x).abs()
    }
}

/// `f(P) = sum_{d,s} w[d, s] P[d, s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOneHot {
    pub dims: usize,
    pub states: usize,
    pub weights: Vec<f64>,
}

impl LinearOneHot {
    pub fn new(dims: usize, states: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != dims * states || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::arg("weights must be finite and D x S"));
        }
        Ok(LinearOneHot { dims, states, weights })
    }
}

impl DifferentiablePredictor for LinearOneHot {
    fn input_len(&self) -> usize {
        self.weights.len()
    }

    fn value(&self, input: &[f64]) -> f64 {
        self.weights.iter().zip(input).map(|(w, p)| w * p).sum()
    }

    fn gradient(&self, _input: &[f64]) -> Vec<f64> {
        self.weights.clone()
    }
}

/// Smooth token count: `f(P) = -scale * (y - sum_d P[d, token])^2`. On hard
/// sequences it agrees with the Gaussian token-count objective.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTokenCount {
    pub dims: usize,
    pub states: usize,
    pub token: u8,
    pub target: f64,
    pub scale: f64,
}

impl QuadraticTokenCount {
    fn count(&self, input: &[f64]) -> f64 {
        (0..self.dims).map(|d| input[d * self.states + self.token as usize]).sum()
    }
}

impl DifferentiablePredictor for QuadraticTokenCount {
    fn input_len(&self) -> usize {
        self.dims * self.states
    }

    fn value(&self, input: &[f64]) -> f64 {
        let r = self.target - self.count(input);
        -self.scale * r * r
    }

    fn gradient(&self, input: &[f64]) -> Vec<f64> {
        let g = 2.0 * self.scale * (self.target - self.count(input));
        let mut out = vec![0.0; self.input_len()];
        for d in 0..self.dims {
            out[d * self.states + self.token as usize] = g;
        }
        out
    }
}

/// Multilinear extension of a classifier table:
/// `f(P) = sum_x prod_d P[d, x_d] log p(y | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMultilinear {
    pub classifier: TabularClassifier,
}

impl TabularMultilinear {
    pub fn new(classifier: TabularClassifier) -> Self {
        TabularMultilinear { classifier }
    }

    fn hard_tokens(&self, input: &[f64]) -> Option<Vec<u8>> {
        let s = self.classifier.states;
        (0..self.classifier.dims)
            .map(|d| {
                let row = &input[d * s..(d + 1) * s];
                let hot = row.iter().position(|&p| p == 1.0)?;
                row.iter().enumerate().all(|(j, &p)| j == hot || p == 0.0).then_some(hot as u8)
            })
            .collect()
    }

    /// Value and gradient by enumeration over the product support.
    fn enumerate(&self, input: &[f64]) -> (f64, Vec<f64>) {
        let (dims, s) = (self.classifier.dims, self.classifier.states);
        let mut grad = vec![0.0; dims * s];
        let mut value = 0.0;
        let mut x = vec![0usize; dims];
        for (i, &lp) in self.classifier.log_probs.iter().enumerate() {
            let mut rem = i;
            for slot in x.iter_mut().rev() {
                *slot = rem % s;
                rem /= s;
            }
            let w: f64 = (0..dims).map(|d| input[d * s + x[d]]).product();
            value += w * lp;
            for d in 0..dims {
                let rest: f64 = (0..dims).filter(|&e| e != d).map(|e| input[e * s + x[e]]).product();
                grad[d * s + x[d]] += rest * lp;
            }
        }
        (value, grad)
    }
}

impl DifferentiablePredictor for TabularMultilinear {
    fn input_len(&self) -> usize {
        self.classifier.dims * self.classifier.states
    }

    fn value(&self, input: &[f64]) -> f64 {
        match self.hard_tokens(input) {
            Some(x) => self.classifier.score(&x),
            None => self.enumerate(input).0,
        }
    }

    /// At one-hot inputs, `df/dP[d, j]` is the table entry with dimension `d`
    /// replaced by `j`.
    fn gradient(&self, input: &[f64]) -> Vec<f64> {
        let Some(mut x) = self.hard_tokens(input) else {
            return self.enumerate(input).1;
        };
        let s = self.classifier.states;
        let mut grad = vec![0.0; self.input_len()];
        for d in 0..x.len() {
            let keep = x[d];
            for j in 0..s {
                x[d] = j as u8;
                grad[d * s + j] = self.classifier.score(&x);
            }
            x[d] = keep;
        }
        grad
    }
}

/// `f(x) = -scale * |x - y|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTarget {
    pub target: Vec<f64>,
    pub scale: f64,
}

impl DifferentiablePredictor for QuadraticTarget {
    fn input_len(&self) -> usize {
        self.target.len()
    }

    fn value(&self, input: &[f64]) -> f64 {
        -self.scale * input.iter().zip(&self.target).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
    }

    fn gradient(&self, input: &[f64]) -> Vec<f64> {
        input.iter().zip(&self.target).map(|(x, y)| -2.0 * self.scale * (x - y)).collect()
    }
}

/// Smooth count-above-threshold:
/// `f(x) = -scale * (y - sum_i sigmoid((x_i - epsilon) / temperature))^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCountAbove {
    pub dim: usize,
    pub epsilon: f64,
    pub target: f64,
    pub temperature: f64,
    pub scale: f64,
}

impl SoftCountAbove {
    fn sigmoids<'a>(&'a self, input: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        input.iter().map(move |x| 1.0 / (1.0 + (-(x - self.epsilon) / self.temperature).exp()))
    }
}

impl DifferentiablePredictor for SoftCountAbove {
    fn input_len(&self) -> usize {
        self.dim
    }

    fn value(&self, input: &[f64]) -> f64 {
        let r = self.target - self.sigmoids(input).sum::<f64>();
        -self.scale * r * r
    }

    fn gradient(&self, input: &[f64]) -> Vec<f64> {
        let r = self.target - self.sigmoids(input).sum::<f64>();
        self.sigmoids(input)
            .map(|s| 2.0 * self.scale * r * s * (1.0 - s) / self.temperature)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform, Purpose, Streams};

    #[test]
    fn regression_values() {
        let id = |x: &[f64]| x[0];
        let o = gaussian_regression(id, 5.0, 1.0).unwrap();
        assert_eq!(o.score(&[5.0][..]), 0.0);
        assert_eq!(o.score(&[3.0][..]), -2.0);
        let o = gaussian_regression(id, 1.0, 0.5).unwrap();
        assert_eq!(o.score(&[1.5][..]), -0.5);
        assert!(gaussian_regression(id, 1.0, 0.0).is_err());
        assert!(gaussian_regression(id, 1.0, -1.0).is_err());
    }

    #[test]
    fn count_above_values() {
        let o = RuleObjective::squared(CountAbove { epsilon: 0.0 }, 0.0);
        assert_eq!(o.score(&[-1.0, -1.0, -1.0][..]), 0.0);
        let x = [1.0, -1.0, 2.0];
        assert_eq!(o.score(&x[..]), -4.0);
        let o = RuleObjective::squared(CountAbove { epsilon: 0.0 }, 2.0);
        assert_eq!(o.score(&x[..]), 0.0);
        assert_eq!(o.abs_error(&[0.0, 0.0, 0.0][..]), 2.0);
    }

    #[test]
    fn token_count_values() {
        let x = [1u8, 0, 1, 2, 1, 3, 0, 0];
        let o = RuleObjective::gaussian(TokenCount { token: 1 }, 3.0, 1.0).unwrap();
        assert_eq!(o.score(&x[..]), 0.0);
        let o = RuleObjective::gaussian(TokenCount { token: 1 }, 5.0, 1.0).unwrap();
        assert_eq!(o.score(&x[..]), -2.0);
        assert_eq!(o.abs_error(&x[..]), 2.0);
        let o = RuleObjective::gaussian(TokenCount { token: 3 }, 0.0, 1.0).unwrap();
        assert_eq!(o.score(&[0u8, 1, 2][..]), 0.0);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + 2f64.ln()).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
        assert!(log_sigmoid(800.0) <= 0.0);
    }

    fn random_stochastic(dims: usize, states: usize, k: u64) -> Vec<f64> {
        let mut rng = Streams::new(3).derive(Purpose::Aux, k, 0, 0);
        let mut p: Vec<f64> = (0..dims * states).map(|_| 0.05 + uniform(&mut rng)).collect();
        for row in p.chunks_mut(states) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        p
    }

    fn assert_fd<P: DifferentiablePredictor>(p: &P, input: &[f64], tol: f64) {
        let g = p.gradient(input);
        let fd = finite_difference_gradient(p, input);
        let scale = g.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= tol * scale, "{g:?} vs {fd:?}");
        }
    }

    #[test]
    fn linear_predictor() {
        let mut rng = Streams::new(4).derive(Purpose::Aux, 0, 0, 0);
        let w: Vec<f64> = (0..9).map(|_| standard_normal(&mut rng)).collect();
        let p = LinearOneHot::new(3, 3, w.clone()).unwrap();
        assert_eq!(predict_hard(&p, &[2, 0, 1], 3), w[2] + w[3] + w[7]);
        for k in 0..10 {
            let input = random_stochastic(3, 3, k);
            assert_eq!(p.gradient(&input), w);
            assert_fd(&p, &input, 1e-8);
        }
    }

    #[test]
    fn smooth_predictors_match_finite_differences() {
        let q = QuadraticTokenCount { dims: 4, states: 3, token: 1, target: 2.5, scale: 0.5 };
        let mut rng = Streams::new(6).derive(Purpose::Aux, 0, 0, 0);
        let c = TabularClassifier::random(3, 3, 0.0, 1.0, &mut rng).unwrap();
        let m = TabularMultilinear::new(c);
        let soft = SoftCountAbove { dim: 5, epsilon: 0.0, target: 3.0, temperature: 0.5, scale: 0.5 };
        let quad = QuadraticTarget { target: vec![0.5, -1.0, 2.0, 0.0, 1.0], scale: 0.5 };
        for k in 0..10 {
            assert_fd(&q, &random_stochastic(4, 3, k), 1e-5);
            assert_fd(&m, &random_stochastic(3, 3, 100 + k), 1e-5);
            let x: Vec<f64> = (0..5).map(|_| standard_normal(&mut rng)).collect();
            assert_fd(&soft, &x, 1e-5);
            assert_fd(&quad, &x, 1e-5);
        }
    }

    #[test]
    fn multilinear_hard_path_matches_enumeration() {
        let mut rng = Streams::new(7).derive(Purpose::Aux, 0, 0, 0);
        let c = TabularClassifier::random(3, 4, -1.0, 1.0, &mut rng).unwrap();
        let m = TabularMultilinear::new(c.clone());
        let x = [3u8, 0, 2];
        let p = one_hot(&x, 4);
        let (v, g) = m.enumerate(&p);
        assert!((m.value(&p) - v).abs() < 1e-15);
        assert_eq!(m.value(&p), c.score(&x[..]));
        for (a, b) in m.gradient(&p).iter().zip(&g) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn classifier_error_is_complement_probability() {
        let c = TabularClassifier::pairwise(1, 2, 0.0, &[0.0, 2.0], &[]).unwrap();
        assert!((c.abs_error(&[0u8][..]) - 0.5).abs() < 1e-15);
        let p1 = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((c.abs_error(&[1u8][..]) - (1.0 - p1)).abs() < 1e-15);
    }
}
