//! Randomized-benchmarking decay models.
//!
//! The zeroth-order model predicts survival A0 p^m + B0 after a sequence of
//! length m; the first-order model adds an edge-correction term
//! C1 (m - 1)(q1 - p^2) p^(m-2) and needs m >= 1. Raw survival values can
//! leave [0, 1] for admissible parameters, so likelihood evaluation clips
//! them into [1e-9, 1 - 1e-9] and reports every clip for diagnostics.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smc::{Estimate, Model, SmcError};
use crate::stats::binomial_log_pmf;

/// Clip margin for survival probabilities used as likelihoods.
pub const SURVIVAL_CLIP_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RbError {
    #[error("first-order survival needs sequence length m >= 1")]
    ZeroSequenceLength,
    #[error("prior mean has dimension {got}, expected {expected}")]
    PriorDimension { got: usize, expected: usize },
    #[error("prior variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("prior dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("isotropic divergence needs equal variances ({left} vs {right})")]
    VarianceMismatch { left: f64, right: f64 },
}

/// Parameters (p, A0, B0) of the zeroth-order decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rb0Params {
    pub p: f64,
    pub a0: f64,
    pub b0: f64,
}

impl Rb0Params {
    pub fn from_slice(params: &[f64]) -> Self {
        assert_eq!(params.len(), 3, "zeroth-order model has 3 parameters");
        Self { p: params[0], a0: params[1], b0: params[2] }
    }
}

/// Parameters (p, A1, B1, C1, q1) of the first-order decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rb1Params {
    pub p: f64,
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub q1: f64,
}

impl Rb1Params {
    pub fn from_slice(params: &[f64]) -> Self {
        assert_eq!(params.len(), 5, "first-order model has 5 parameters");
        Self { p: params[0], a1: params[1], b1: params[2], c1: params[3], q1: params[4] }
    }
}

/// Survival A0 p^m + B0.
pub fn rb0_survival(params: &Rb0Params, m: u32) -> f64 {
    params.a0 * params.p.powi(m as i32) + params.b0
}

/// Survival A1 p^m + B1 + C1 (m - 1)(q1 - p^2) p^(m-2); the correction term
/// is exactly zero at m = 1, and m = 0 is rejected.
pub fn rb1_survival(params: &Rb1Params, m: u32) -> Result<f64, RbError> {
    if m == 0 {
        return Err(RbError::ZeroSequenceLength);
    }
    let base = params.a1 * params.p.powi(m as i32) + params.b1;
    let correction = if m == 1 {
        0.0
    } else {
        params.c1
            * (m - 1) as f64
            * (params.q1 - params.p * params.p)
            * params.p.powi(m as i32 - 2)
    };
    Ok(base + correction)
}

/// Clamp a raw survival value into [eps, 1 - eps]; the flag reports whether
/// clamping changed the value.
pub fn clip_survival(survival: f64) -> (f64, bool) {
    let clipped = survival.clamp(SURVIVAL_CLIP_EPS, 1.0 - SURVIVAL_CLIP_EPS);
    (clipped, clipped != survival)
}

/// Probability of `outcome` (0 = survival, 1 = loss) under a raw survival
/// value; the flag reports a clip event.
pub fn rb_likelihood(survival: f64, outcome: u8) -> (f64, bool) {
    assert!(outcome <= 1, "outcome must be 0 or 1");
    let (p, clipped) = clip_survival(survival);
    (if outcome == 0 { p } else { 1.0 - p }, clipped)
}

/// Isotropic Gaussian prior N(mean, variance * I).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPriorSpec {
    mean: Vec<f64>,
    variance: f64,
}

impl GaussianPriorSpec {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self, RbError> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(RbError::NonPositiveVariance(variance));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let sd = self.variance.sqrt();
        self.mean
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + sd * z
            })
            .collect()
    }
}

/// KL divergence between two isotropic Gaussians of equal variance:
/// ||mu_a - mu_b||^2 / (2 variance).
pub fn gaussian_kl(a: &GaussianPriorSpec, b: &GaussianPriorSpec) -> Result<f64, RbError> {
    if a.dimension() != b.dimension() {
        return Err(RbError::DimensionMismatch { left: a.dimension(), right: b.dimension() });
    }
    if a.variance != b.variance {
        return Err(RbError::VarianceMismatch { left: a.variance, right: b.variance });
    }
    let sq: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sq / (2.0 * a.variance))
}

/// Prior mean set for the first-order model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RbPriorSet {
    I,
    II,
}

/// How the configured prior scale of 0.01 is read: as the variance of every
/// coordinate (default) or as its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorScaleConvention {
    Variance,
    Stddev,
}

/// The quoted per-coordinate prior scale.
pub const RB_PRIOR_SCALE: f64 = 0.01;

pub fn rb_prior_variance(convention: PriorScaleConvention) -> f64 {
    match convention {
        PriorScaleConvention::Variance => RB_PRIOR_SCALE,
        PriorScaleConvention::Stddev => RB_PRIOR_SCALE * RB_PRIOR_SCALE,
    }
}

/// Prior for the zeroth-order model: mean (0.95, 0.3, 0.5).
pub fn rb0_prior(convention: PriorScaleConvention) -> GaussianPriorSpec {
    GaussianPriorSpec::new(vec![0.95, 0.3, 0.5], rb_prior_variance(convention))
        .expect("fixed positive variance")
}

/// Prior for the first-order model: mean (0.95, 0.3, 0.5, 0.03, 0.95) for
/// set I and (0.95, 0.3, 0.5, 0.02, 0.92) for set II.
pub fn rb1_prior(set: RbPriorSet, convention: PriorScaleConvention) -> GaussianPriorSpec {
    let mean = match set {
        RbPriorSet::I => vec![0.95, 0.3, 0.5, 0.03, 0.95],
        RbPriorSet::II => vec![0.95, 0.3, 0.5, 0.02, 0.92],
    };
    GaussianPriorSpec::new(mean, rb_prior_variance(convention)).expect("fixed positive variance")
}

/// One sequence length measured `reps` times; the outcome paired with it is
/// the count of survivals.
#[derive(Debug, Clone, Copy)]
pub struct RbContext {
    length: u32,
    reps: u64,
}

impl RbContext {
    pub fn new(length: u32, reps: u64) -> Self {
        assert!(length >= 1, "sequence length must be at least 1");
        assert!(reps >= 1, "repetition count must be at least 1");
        Self { length, reps }
    }

    pub fn length(&self) -> u32 {
        self.length
    }

    pub fn reps(&self) -> u64 {
        self.reps
    }
}

fn clip_counting(survival: f64, clip_events: &AtomicU64) -> f64 {
    let (p, clipped) = clip_survival(survival);
    if clipped {
        clip_events.fetch_add(1, Ordering::Relaxed);
    }
    p
}

/// Zeroth-order candidate model over (p, A0, B0).
pub struct Rb0Model {
    prior: GaussianPriorSpec,
    clip_events: Arc<AtomicU64>,
}

impl Rb0Model {
    pub fn new(prior: GaussianPriorSpec, clip_events: Arc<AtomicU64>) -> Result<Self, RbError> {
        if prior.dimension() != 3 {
            return Err(RbError::PriorDimension { got: prior.dimension(), expected: 3 });
        }
        Ok(Self { prior, clip_events })
    }
}

impl Model<u64, RbContext> for Rb0Model {
    fn name(&self) -> &str {
        "zeroth-order"
    }

    fn dimension(&self) -> usize {
        3
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.prior.sample(rng)
    }

    fn log_likelihood(&self, outcome: &u64, context: &RbContext, params: &[f64]) -> f64 {
        let s = rb0_survival(&Rb0Params::from_slice(params), context.length());
        let p = clip_counting(s, &self.clip_events);
        binomial_log_pmf(*outcome, context.reps(), p)
    }

    fn estimate(&self, params: &[f64]) -> Result<Estimate, SmcError> {
        Ok(Estimate::Scalar(params[0]))
    }
}

/// First-order candidate model over (p, A1, B1, C1, q1).
pub struct Rb1Model {
    prior: GaussianPriorSpec,
    clip_events: Arc<AtomicU64>,
}

impl Rb1Model {
    pub fn new(prior: GaussianPriorSpec, clip_events: Arc<AtomicU64>) -> Result<Self, RbError> {
        if prior.dimension() != 5 {
            return Err(RbError::PriorDimension { got: prior.dimension(), expected: 5 });
        }
        Ok(Self { prior, clip_events })
    }
}

impl Model<u64, RbContext> for Rb1Model {
    fn name(&self) -> &str {
        "first-order"
    }

    fn dimension(&self) -> usize {
        5
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.prior.sample(rng)
    }

    fn log_likelihood(&self, outcome: &u64, context: &RbContext, params: &[f64]) -> f64 {
        let s = rb1_survival(&Rb1Params::from_slice(params), context.length())
            .expect("contexts enforce length >= 1");
        let p = clip_counting(s, &self.clip_events);
        binomial_log_pmf(*outcome, context.reps(), p)
    }

    fn estimate(&self, params: &[f64]) -> Result<Estimate, SmcError> {
        Ok(Estimate::Scalar(params[0]))
    }
}
