//! Masked discrete flow: corruption, rate matrices, Euler sampling and an
//! exact tabular denoiser.
//!
//! Tokens are `u8` values in `0..S`; [`MASK`] is the absorbing noise state.
//! Per-dimension distributions over "next token" use `S + 1` slots where the
//! last slot means "stay masked".

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::rng::{pick, standard_normal, uniform};
use crate::{Error, Result};

pub const MASK: u8 = u8::MAX;

/// Largest table the enumerating denoiser accepts (`6^8`).
pub const MAX_TABLE_SIZE: usize = 1_679_616;

/// Stay mass below this is treated as zero, absorbing rounding in
/// `dt / (1 - t)` on the final step.
const STAY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiscreteSequence {
    pub tokens: Vec<u8>,
    pub step: usize,
}

impl DiscreteSequence {
    pub fn new(tokens: Vec<u8>, step: usize) -> Self {
        DiscreteSequence { tokens, step }
    }

    /// The prior: every dimension masked, at `t = 0`.
    pub fn masked(dims: usize) -> Self {
        DiscreteSequence { tokens: vec![MASK; dims], step: 0 }
    }

    pub fn masked_dims(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens.iter().enumerate().filter(|(_, &t)| t == MASK).map(|(d, _)| d)
    }

    pub fn is_clean(&self) -> bool {
        self.tokens.iter().all(|&t| t != MASK)
    }
}

/// Per-dimension categorical distributions, row-major `dims x states`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    dims: usize,
    states: usize,
    probs: Vec<f64>,
}

impl Marginals {
    pub fn new(dims: usize, states: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != dims * states {
            return Err(Error::arg("marginals must be dims x states"));
        }
        Ok(Marginals { dims, states, probs })
    }

    pub fn point_masses(tokens: &[u8], states: usize) -> Self {
        let mut probs = vec![0.0; tokens.len() * states];
        for (d, &t) in tokens.iter().enumerate() {
            probs[d * states + t as usize] = 1.0;
        }
        Marginals { dims: tokens.len(), states, probs }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.probs[d * self.states..(d + 1) * self.states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Draw a clean sequence: masked dimensions from their rows (inverse
    /// CDF, one uniform per masked dimension), observed dimensions copied.
    pub fn sample_clean<R: Rng + ?Sized>(&self, tokens: &[u8], rng: &mut R) -> Vec<u8> {
        tokens
            .iter()
            .enumerate()
            .map(|(d, &t)| if t == MASK { pick(self.row(d), uniform(rng)) as u8 } else { t })
            .collect()
    }

    /// Exact `E[f(x1)]` for `x1` drawn independently per dimension from the
    /// rows, together with the partial derivatives `dE / du[d, s]` of its
    /// multilinear extension: the expectation with `x1[d]` pinned to `s`
    /// under the remaining rows. Partials are defined for zero-probability
    /// entries too. Enumerates the product support.
    pub fn expect_with_partials<F: Fn(&[u8]) -> f64>(&self, f: F) -> (f64, Vec<f64>) {
        let mut partials = vec![0.0; self.dims * self.states];
        for d in 0..self.dims {
            for s in 0..self.states {
                partials[d * self.states + s] = self.pinned_sum(Some((d, s as u8)), &f);
            }
        }
        (self.pinned_sum(None, &f), partials)
    }

    pub fn expect<F: Fn(&[u8]) -> f64>(&self, f: F) -> f64 {
        self.pinned_sum(None, &f)
    }

    /// `sum_x prod_{e != d} u[e, x_e] f(x)` with `x_d = s` when pinned,
    /// the plain expectation otherwise.
    fn pinned_sum<F: Fn(&[u8]) -> f64>(&self, pin: Option<(usize, u8)>, f: &F) -> f64 {
        let support: Vec<Vec<(u8, f64)>> = (0..self.dims)
            .map(|d| match pin {
                Some((e, s)) if e == d => vec![(s, 1.0)],
                _ => self
                    .row(d)
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s, &p)| (s as u8, p))
                    .collect(),
            })
            .collect();
        if support.iter().any(|s| s.is_empty()) {
            return 0.0;
        }
        let mut total = 0.0;
        let mut cursor = vec![0usize; self.dims];
        let mut x: Vec<u8> = support.iter().map(|s| s[0].0).collect();
        loop {
            let w: f64 = (0..self.dims).map(|d| support[d][cursor[d]].1).product();
            total += w * f(&x);
            // odometer
            let mut d = self.dims;
            loop {
                if d == 0 {
                    return total;
                }
                d -= 1;
                cursor[d] += 1;
                if cursor[d] < support[d].len() {
                    x[d] = support[d][cursor[d]].0;
                    break;
                }
                cursor[d] = 0;
                x[d] = support[d][0].0;
            }
        }
    }
}

/// Predicts per-dimension clean-token distributions from a masked sequence.
pub trait DiscreteDenoiser: Send + Sync {
    fn dims(&self) -> usize;
    fn states(&self) -> usize;
    fn predict(&self, tokens: &[u8], step: usize) -> Result<Marginals>;
}

/// An explicit probability table over `[S]^D`; dimension 0 is the most
/// significant digit of the flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularData {
    dims: usize,
    states: usize,
    probs: Vec<f64>,
}

impl TabularData {
    pub fn new(dims: usize, states: usize, probs: Vec<f64>) -> Result<Self> {
        if dims == 0 || states == 0 || states >= MASK as usize {
            return Err(Error::arg("table needs D >= 1 and 1 <= S < 255"));
        }
        let size = table_size(dims, states)?;
        if probs.len() != size {
            return Err(Error::arg("table length must be S^D"));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::arg("table entries must be finite and nonnegative"));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::arg("table must sum to 1"));
        }
        Ok(TabularData { dims, states, probs })
    }

    /// Normalizes nonnegative weights into a table.
    pub fn from_weights(dims: usize, states: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::arg("weights must have positive finite total"));
        }
        let mut probs: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
        // put the rounding residue on the largest entry
        let residue = 1.0 - probs.iter().sum::<f64>();
        if let Some(m) = probs.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *m += residue;
        }
        TabularData::new(dims, states, probs)
    }

    pub fn from_fn<F: Fn(&[u8]) -> f64>(dims: usize, states: usize, f: F) -> Result<Self> {
        let size = table_size(dims, states)?;
        let mut x = vec![0u8; dims];
        let weights = (0..size)
            .map(|i| {
                decode_into(i, states, &mut x);
                f(&x)
            })
            .collect();
        TabularData::from_weights(dims, states, weights)
    }

    /// `p(x) ∝ exp(-(count_token(x) - center)^2 / (2 width^2))`.
    pub fn count_weighted(dims: usize, states: usize, token: u8, center: f64, width: f64) -> Result<Self> {
        if token as usize >= states || !(width > 0.0) {
            return Err(Error::arg("count-weighted table needs a valid token and width > 0"));
        }
        TabularData::from_fn(dims, states, |x| {
            let n = x.iter().filter(|&&t| t == token).count() as f64;
            (-(n - center) * (n - center) / (2.0 * width * width)).exp()
        })
    }

    /// Log-normal random weights with log-scale `spread`.
    pub fn random<R: Rng + ?Sized>(dims: usize, states: usize, spread: f64, rng: &mut R) -> Result<Self> {
        let size = table_size(dims, states)?;
        let weights = (0..size).map(|_| (spread * standard_normal(rng)).exp()).collect();
        TabularData::from_weights(dims, states, weights)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn index_of(&self, x: &[u8]) -> usize {
        x.iter().fold(0, |acc, &t| acc * self.states + t as usize)
    }

    pub fn decode(&self, index: usize) -> Vec<u8> {
        let mut x = vec![0u8; self.dims];
        decode_into(index, self.states, &mut x);
        x
    }

    pub fn prob(&self, x: &[u8]) -> f64 {
        self.probs[self.index_of(x)]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        self.decode(pick(&self.probs, uniform(rng)))
    }

    /// Exact `p(x1[d] | observed tokens of x_t)` for every dimension.
    /// Masking is independent of `x1`, so conditioning reduces to restricting
    /// the table to the observed coordinates.
    pub fn posterior(&self, tokens: &[u8]) -> Result<Marginals> {
        let (d_count, s) = (self.dims, self.states);
        if tokens.len() != d_count {
            return Err(Error::arg("sequence length does not match the table"));
        }
        let mut strides = vec![1usize; d_count];
        for d in (0..d_count.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * s;
        }
        let mut base = 0usize;
        let mut masked = Vec::new();
        for (d, &t) in tokens.iter().enumerate() {
            if t == MASK {
                masked.push(d);
            } else if (t as usize) < s {
                base += t as usize * strides[d];
            } else {
                return Err(Error::arg("token out of range"));
            }
        }
        let mut acc = vec![0.0; d_count * s];
        let mut total = 0.0;
        let mut digits = vec![0usize; masked.len()];
        let mut idx = base;
        loop {
            let p = self.probs[idx];
            if p > 0.0 {
                total += p;
                for (&d, &c) in masked.iter().zip(&digits) {
                    acc[d * s + c] += p;
                }
            }
            let mut i = masked.len();
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                let stride = strides[masked[i]];
                if digits[i] + 1 < s {
                    digits[i] += 1;
                    idx += stride;
                    break;
                }
                idx -= digits[i] * stride;
                digits[i] = 0;
            }
            if i == 0 && digits.iter().all(|&c| c == 0) {
                break;
            }
        }
        if !(total > 0.0) {
            return Err(Error::OffSupport);
        }
        for &d in &masked {
            for v in &mut acc[d * s..(d + 1) * s] {
                *v /= total;
            }
        }
        for (d, &t) in tokens.iter().enumerate() {
            if t != MASK {
                acc[d * s + t as usize] = 1.0;
            }
        }
        Ok(Marginals { dims: d_count, states: s, probs: acc })
    }
}

fn table_size(dims: usize, states: usize) -> Result<usize> {
    let mut size = 1usize;
    for _ in 0..dims {
        size = size.checked_mul(states).filter(|&n| n <= MAX_TABLE_SIZE).ok_or_else(|| {
            Error::arg("table exceeds the enumerable size limit")
        })?;
    }
    Ok(size)
}

fn decode_into(mut index: usize, states: usize, out: &mut [u8]) {
    for slot in out.iter_mut().rev() {
        *slot = (index % states) as u8;
        index /= states;
    }
}

/// The exact Bayes denoiser for a [`TabularData`] distribution.
#[derive(Debug, Clone)]
pub struct TabularDenoiser {
    pub data: TabularData,
}

impl TabularDenoiser {
    pub fn new(data: TabularData) -> Self {
        TabularDenoiser { data }
    }
}

impl DiscreteDenoiser for TabularDenoiser {
    fn dims(&self) -> usize {
        self.data.dims()
    }

    fn states(&self) -> usize {
        self.data.states()
    }

    fn predict(&self, tokens: &[u8], _step: usize) -> Result<Marginals> {
        self.data.posterior(tokens)
    }
}

/// Keep each token with probability `t`, otherwise mask it.
pub fn corrupt_discrete<R: Rng + ?Sized>(x1: &[u8], t: f64, rng: &mut R) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::arg("t must lie in [0, 1]"));
    }
    Ok(x1.iter().map(|&tok| if uniform(rng) < t { tok } else { MASK }).collect())
}

/// `R_t(x_t, j | x1) = [j == x1] [x_t == M] / (1 - t)`.
pub fn conditional_rate(current: u8, target: u8, clean: u8, t: f64) -> Result<f64> {
    if !(t < 1.0) {
        return Err(Error::arg("conditional rate is singular at t = 1"));
    }
    Ok(if current == MASK && target == clean { 1.0 / (1.0 - t) } else { 0.0 })
}

/// Off-diagonal jump rates; rows are stored only for masked dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSpec {
    dims: usize,
    states: usize,
    /// Masked dimensions, ascending, and their dense rows.
    rows: Vec<(usize, Vec<f64>)>,
}

impl RateSpec {
    pub fn zeros(dims: usize, states: usize) -> Self {
        RateSpec { dims, states, rows: Vec::new() }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn rate(&self, d: usize, j: usize) -> f64 {
        self.row(d).map_or(0.0, |r| r[j])
    }

    pub fn row(&self, d: usize) -> Option<&[f64]> {
        self.rows.iter().find(|(dim, _)| *dim == d).map(|(_, r)| r.as_slice())
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(d, r)| (*d, r.as_slice()))
    }

    pub(crate) fn rows_mut(&mut self) -> impl Iterator<Item = (usize, &mut Vec<f64>)> {
        self.rows.iter_mut().map(|(d, r)| (*d, r))
    }

    /// Builds a rate table from masked-dimension rows. Rows for observed
    /// dimensions are rejected.
    pub fn from_rows(tokens: &[u8], states: usize, rows: Vec<(usize, Vec<f64>)>) -> Result<Self> {
        for (d, r) in &rows {
            if *d >= tokens.len() || tokens[*d] != MASK || r.len() != states {
                return Err(Error::arg("rate rows must be length-S rows of masked dimensions"));
            }
        }
        let mut rows = rows;
        rows.sort_by_key(|(d, _)| *d);
        Ok(RateSpec { dims: tokens.len(), states, rows })
    }
}

/// `R(x_t, j) = E_{x1 ~ u}[R_t(x_t, j | x1)] = u[d, j] / (1 - t)` on masked
/// dimensions.
pub fn model_rate(tokens: &[u8], marginals: &Marginals, t: f64) -> Result<RateSpec> {
    if !(t < 1.0) {
        return Err(Error::arg("model rate is singular at t = 1"));
    }
    let scale = 1.0 / (1.0 - t);
    let rows = tokens
        .iter()
        .enumerate()
        .filter(|(_, &tok)| tok == MASK)
        .map(|(d, _)| (d, marginals.row(d).iter().map(|p| p * scale).collect()))
        .collect();
    Ok(RateSpec { dims: tokens.len(), states: marginals.states(), rows })
}

/// Rates of the `x1`-conditioned flow: jump to `x1[d]` at `1 / (1 - t)`.
pub fn destination_rate(tokens: &[u8], clean: &[u8], states: usize, t: f64) -> Result<RateSpec> {
    let mut rows = Vec::new();
    for (d, &tok) in tokens.iter().enumerate() {
        if tok == MASK {
            let row = (0..states as u8)
                .map(|j| conditional_rate(tok, j, clean[d], t))
                .collect::<Result<Vec<f64>>>()?;
            rows.push((d, row));
        }
    }
    Ok(RateSpec { dims: tokens.len(), states, rows })
}

/// Per-dimension next-token law of one Euler step, over `S + 1` slots (the
/// last slot is "stay masked"). Jump mass above 1 is renormalized; stay mass
/// below `1e-12` is dropped.
pub fn jump_law(row: &[f64], dt: f64) -> Result<Vec<f64>> {
    if row.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::arg("rates must be nonnegative"));
    }
    let mut law: Vec<f64> = row.iter().map(|r| r * dt).collect();
    let jump: f64 = law.iter().sum();
    if !jump.is_finite() {
        return Err(Error::arg("rates must be finite"));
    }
    if jump > 1.0 {
        for p in &mut law {
            *p /= jump;
        }
    }
    let stay = 1.0 - law.iter().sum::<f64>();
    law.push(if stay < STAY_EPS { 0.0 } else { stay });
    Ok(law)
}

/// Full per-dimension transition law of [`euler_step`]; observed dimensions
/// are point masses on their token.
pub fn transition_law(tokens: &[u8], rates: &RateSpec, dt: f64) -> Result<Vec<Vec<f64>>> {
    let s = rates.states();
    tokens
        .iter()
        .enumerate()
        .map(|(d, &tok)| {
            if tok != MASK {
                let mut law = vec![0.0; s + 1];
                law[tok as usize] = 1.0;
                return Ok(law);
            }
            match rates.row(d) {
                Some(row) => jump_law(row, dt),
                None => {
                    let mut law = vec![0.0; s + 1];
                    law[s] = 1.0;
                    Ok(law)
                }
            }
        })
        .collect()
}

/// One Euler step of the CTMC: each masked dimension jumps to `j` with
/// probability `R(j) dt` and otherwise stays masked.
pub fn euler_step<R: Rng + ?Sized>(tokens: &[u8], rates: &RateSpec, dt: f64, rng: &mut R) -> Result<Vec<u8>> {
    let s = rates.states();
    let mut out = tokens.to_vec();
    for (d, row) in rates.rows() {
        let law = jump_law(row, dt)?;
        let slot = pick(&law, uniform(rng));
        out[d] = if slot == s { MASK } else { slot as u8 };
    }
    Ok(out)
}
