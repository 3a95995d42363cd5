//! Shannon and Havrda-Charvat entropies and cross-entropies on the binary
//! outcome space `{0, 1}`.
//!
//! All logarithms are natural. A parameter `alpha == 1` is accepted
//! everywhere and selects the Shannon form, which is the `alpha -> 1` limit
//! of the Havrda-Charvat family.
//!
//! Cross-entropies clamp every component of the predicted distribution to
//! `[eps, 1 - eps]` before evaluation, so `log 0` and `0^(alpha - 2)` never
//! occur.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to predicted probabilities unless configured otherwise.
pub const DEFAULT_EPSILON: f64 = 1e-7;
/// Largest clamp a [`LossSpec`] accepts.
pub const MAX_EPSILON: f64 = 1e-3;

const SUM_TOLERANCE: f64 = 1e-9;

/// One of the two states of a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOutcome {
    Uninformative = 0,
    Informative = 1,
}

impl BinaryOutcome {
    pub const ALL: [BinaryOutcome; 2] = [BinaryOutcome::Uninformative, BinaryOutcome::Informative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(BinaryOutcome::Uninformative),
            1 => Some(BinaryOutcome::Informative),
            _ => None,
        }
    }
}

/// A probability distribution over [`BinaryOutcome`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbabilityPair {
    p: [f64; 2],
}

impl ProbabilityPair {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p0) || !(0.0..=1.0).contains(&p1) {
            return Err(Error::domain(format!(
                "probabilities must lie in [0, 1], got ({p0}, {p1})"
            )));
        }
        if (p0 + p1 - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::domain(format!(
                "probabilities must sum to 1, got {p0} + {p1} = {}",
                p0 + p1
            )));
        }
        Ok(ProbabilityPair { p: [p0, p1] })
    }

    /// Distribution `(1 - p1, p1)`.
    pub fn from_informative(p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) {
            return Err(Error::domain(format!("p(1) must lie in [0, 1], got {p1}")));
        }
        Ok(ProbabilityPair { p: [1.0 - p1, p1] })
    }

    /// The point mass on `outcome`: the supervised target of a labelled frame.
    pub fn dirac(outcome: BinaryOutcome) -> Self {
        let mut p = [0.0; 2];
        p[outcome.index()] = 1.0;
        ProbabilityPair { p }
    }

    pub fn uniform() -> Self {
        ProbabilityPair { p: [0.5, 0.5] }
    }

    pub fn p0(&self) -> f64 {
        self.p[0]
    }

    pub fn p1(&self) -> f64 {
        self.p[1]
    }

    pub fn get(&self, outcome: BinaryOutcome) -> f64 {
        self.p[outcome.index()]
    }

    pub fn as_array(&self) -> [f64; 2] {
        self.p
    }

    pub fn is_dirac(&self) -> bool {
        self.p.contains(&1.0)
    }

    fn clamped(&self, eps: f64) -> [f64; 2] {
        self.p.map(|v| v.clamp(eps, 1.0 - eps))
    }
}

/// Reference measure on the outcome space. Defaults to the counting measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub w0: f64,
    pub w1: f64,
}

impl Default for Measure {
    fn default() -> Self {
        Measure::counting()
    }
}

impl Measure {
    pub fn counting() -> Self {
        Measure { w0: 1.0, w1: 1.0 }
    }

    pub fn new(w0: f64, w1: f64) -> Result<Self> {
        let m = Measure { w0, w1 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w0 > 0.0 && self.w1 > 0.0 && self.w0.is_finite() && self.w1.is_finite()) {
            return Err(Error::domain(format!(
                "measure weights must be finite and positive, got ({}, {})",
                self.w0, self.w1
            )));
        }
        Ok(())
    }

    fn weights(&self) -> [f64; 2] {
        [self.w0, self.w1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyFamily {
    Shannon,
    HavrdaCharvat,
}

/// Which cross-entropy to train with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: EntropyFamily,
    pub alpha: f64,
    #[serde(default)]
    pub measure: Measure,
    #[serde(default = "default_epsilon")]
    pub clamp_epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::shannon()
    }
}

impl LossSpec {
    pub fn shannon() -> Self {
        LossSpec {
            family: EntropyFamily::Shannon,
            alpha: 1.0,
            measure: Measure::counting(),
            clamp_epsilon: DEFAULT_EPSILON,
        }
    }

    /// Havrda-Charvat loss; `alpha == 1` is allowed and behaves as Shannon.
    pub fn havrda_charvat(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(LossSpec {
            family: EntropyFamily::HavrdaCharvat,
            alpha,
            measure: Measure::counting(),
            clamp_epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn with_measure(mut self, measure: Measure) -> Result<Self> {
        measure.validate()?;
        self.measure = measure;
        Ok(self)
    }

    pub fn with_epsilon(mut self, eps: f64) -> Result<Self> {
        check_epsilon(eps)?;
        self.clamp_epsilon = eps;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_epsilon(self.clamp_epsilon)?;
        self.measure.validate()
    }

    /// Parameter actually used: Shannon is the `alpha = 1` member.
    pub fn effective_alpha(&self) -> f64 {
        match self.family {
            EntropyFamily::Shannon => 1.0,
            EntropyFamily::HavrdaCharvat => self.alpha,
        }
    }

    /// Measure-weighted cross-entropy of one prediction against its target.
    ///
    /// `sum_w nu(w) q(w) (1 - p(w)^(alpha-1)) / (alpha-1)`, or
    /// `-sum_w nu(w) q(w) ln p(w)` at `alpha = 1`. With the counting measure
    /// this is exactly [`hc_cross_entropy`].
    pub fn sample_loss(&self, q: &ProbabilityPair, p: &ProbabilityPair) -> f64 {
        let alpha = self.effective_alpha();
        let p = p.clamped(self.clamp_epsilon);
        let w = self.measure.weights();
        (0..2)
            .filter(|&i| q.p[i] != 0.0)
            .map(|i| w[i] * q.p[i] * hc_dirac_term(p[i], alpha))
            .sum()
    }

    /// Derivative of [`LossSpec::sample_loss`] with respect to `p(1)`, taking
    /// `p(0) = 1 - p(1)`.
    pub fn sample_grad(&self, q: &ProbabilityPair, p: &ProbabilityPair) -> f64 {
        let alpha = self.effective_alpha();
        let p = p.clamped(self.clamp_epsilon);
        let w = self.measure.weights();
        let exponent = alpha - 2.0;
        -w[1] * q.p[1] * pow0(p[1], exponent) + w[0] * q.p[0] * pow0(p[0], exponent)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 1.0 && alpha.is_finite()) {
        return Err(Error::domain(format!("alpha must be finite and >= 1, got {alpha}")));
    }
    Ok(())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= MAX_EPSILON) {
        return Err(Error::domain(format!(
            "clamp epsilon must lie in (0, {MAX_EPSILON}], got {eps}"
        )));
    }
    Ok(())
}

/// `x^e` with `0^e = 0` for `e > 0`.
fn pow0(x: f64, e: f64) -> f64 {
    if x == 0.0 && e > 0.0 {
        0.0
    } else {
        x.powf(e)
    }
}

/// `x ln x` with `0 ln 0 = 0`.
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `(1 - p^(alpha-1)) / (alpha-1)`, or `-ln p` at `alpha = 1`. Uses `expm1`
/// so that `alpha` close to 1 does not cancel catastrophically.
fn hc_dirac_term(p: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        -p.ln()
    } else {
        let a = alpha - 1.0;
        -(a * p.ln()).exp_m1() / a
    }
}

/// The convex generating functional `h_alpha(p) = (p^alpha - p) / (alpha - 1)`,
/// with `h_1(p) = p ln p`.
pub fn h_alpha(p: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("p must lie in [0, 1], got {p}")));
    }
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(xlogx(p));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let a = alpha - 1.0;
    Ok(p * (a * p.ln()).exp_m1() / a)
}

/// `H_nu(p) = -sum_w ln(p(w)) p(w) nu(w)`.
pub fn shannon_entropy(p: &ProbabilityPair, nu: &Measure) -> f64 {
    -p.p
        .iter()
        .zip(nu.weights())
        .map(|(&pw, w)| xlogx(pw) * w)
        .sum::<f64>()
}

/// Havrda-Charvat entropy `sum_w (p(w) - p(w)^alpha) nu(w) / (alpha - 1)`.
pub fn hc_entropy(p: &ProbabilityPair, alpha: f64, nu: &Measure) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(shannon_entropy(p, nu));
    }
    let mut total = 0.0;
    for (&pw, w) in p.p.iter().zip(nu.weights()) {
        total -= h_alpha(pw, alpha)? * w;
    }
    Ok(total)
}

/// Cross-entropy generated by an arbitrary functional `h`:
/// `H(q, p) = -sum_w h(p(w)) q(w) / p(w)`. Outcomes with `q(w) = 0` are skipped.
pub fn generalized_cross_entropy<F>(
    q: &ProbabilityPair,
    p: &ProbabilityPair,
    h: F,
    eps: f64,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    check_epsilon(eps)?;
    let p = p.clamped(eps);
    Ok(-(0..2)
        .filter(|&i| q.p[i] != 0.0)
        .map(|i| h(p[i]) * q.p[i] / p[i])
        .sum::<f64>())
}

/// `H_1(q, p) = -sum_w q(w) ln p(w)`.
pub fn shannon_cross_entropy(q: &ProbabilityPair, p: &ProbabilityPair, eps: f64) -> Result<f64> {
    check_epsilon(eps)?;
    let p = p.clamped(eps);
    Ok(-(0..2)
        .filter(|&i| q.p[i] != 0.0)
        .map(|i| q.p[i] * p[i].ln())
        .sum::<f64>())
}

/// `H_alpha(q, p) = (1 - sum_w p(w)^(alpha-1) q(w)) / (alpha - 1)`.
pub fn hc_cross_entropy(
    q: &ProbabilityPair,
    p: &ProbabilityPair,
    alpha: f64,
    eps: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return shannon_cross_entropy(q, p, eps);
    }
    check_epsilon(eps)?;
    let p = p.clamped(eps);
    let a = alpha - 1.0;
    // 1 - sum q p^a = sum q (1 - p^a) since q sums to one.
    Ok((0..2)
        .filter(|&i| q.p[i] != 0.0)
        .map(|i| -q.p[i] * (a * p[i].ln()).exp_m1())
        .sum::<f64>()
        / a)
}

/// `d H_alpha(q, p) / d p(1) = -q(1) p(1)^(alpha-2) + q(0) p(0)^(alpha-2)`
/// with `p(0) = 1 - p(1)`.
pub fn hc_cross_entropy_grad(
    q: &ProbabilityPair,
    p: &ProbabilityPair,
    alpha: f64,
    eps: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_epsilon(eps)?;
    let p = p.clamped(eps);
    let e = alpha - 2.0;
    Ok(-q.p[1] * pow0(p[1], e) + q.p[0] * pow0(p[0], e))
}

/// Mean per-sample cross-entropy of a batch under `spec`.
pub fn batch_loss(
    targets: &[ProbabilityPair],
    outputs: &[ProbabilityPair],
    spec: &LossSpec,
) -> Result<f64> {
    if targets.len() != outputs.len() {
        return Err(Error::LengthMismatch {
            left: targets.len(),
            right: outputs.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    spec.validate()?;
    let total: f64 = targets
        .iter()
        .zip(outputs)
        .map(|(q, p)| spec.sample_loss(q, p))
        .sum();
    Ok(total / targets.len() as f64)
}

/// Largest relative error between [`LossSpec::sample_grad`] and a central
/// difference of [`LossSpec::sample_loss`] in `p(1)`, over both Dirac targets
/// and 99 points `p(1)` evenly spaced in `[0.01, 0.99]`.
pub fn loss_grad_check(spec: &LossSpec, step: f64) -> Result<f64> {
    spec.validate()?;
    if !(step > 0.0 && step < 0.005) {
        return Err(Error::domain(format!("step must lie in (0, 0.005), got {step}")));
    }
    let mut worst: f64 = 0.0;
    for outcome in BinaryOutcome::ALL {
        let q = ProbabilityPair::dirac(outcome);
        for k in 1..=99 {
            let p1 = k as f64 / 100.0;
            let at = |v: f64| ProbabilityPair { p: [1.0 - v, v] };
            let numeric = (spec.sample_loss(&q, &at(p1 + step)) - spec.sample_loss(&q, &at(p1 - step))) / (2.0 * step);
            let analytic = spec.sample_grad(&q, &at(p1));
            worst = worst.max(crate::nn::gradcheck::relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}
