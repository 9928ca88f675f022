//! Sequential Monte Carlo core: weighted particle clouds over model
//! parameters, Bayesian weight updates, Liu-West rejuvenation, posterior
//! means and marginal-likelihood (evidence) accumulation.
//!
//! A cloud approximates the posterior over a model's parameter vector by
//! particles x_j with weights w_j. An observation D re-weights by Bayes'
//! rule, w_j <- w_j * Pr(D | x_j) / Z with Z = sum_j w_j * Pr(D | x_j), and
//! the normalizers Z of successive updates multiply into an estimate of the
//! model's evidence Pr(data | model). The evidence is accumulated in natural
//! log space so long runs cannot underflow; within a single update the
//! arithmetic stays linear unless the normalizer falls below 1e-300, in which
//! case the update is redone on log-weights with a max shift. That fallback
//! is why models expose `log_likelihood` natively.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::tomography::{ComplexMatrix, DensityMatrix};
use num_complex::Complex64;

/// Below this linear-space normalizer, an update is recomputed on log-weights.
const LINEAR_NORMALIZER_FLOOR: f64 = 1e-300;
/// Jitter added to a covariance that fails its Cholesky factorization.
const COVARIANCE_JITTER: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SmcError {
    #[error("particle count must be at least 1")]
    EmptyCloud,
    #[error("zero evidence: every particle assigns zero likelihood to outcome {outcome}")]
    ZeroEvidence { outcome: String },
    #[error("model produced a NaN log-likelihood for outcome {outcome}")]
    NonFiniteLikelihood { outcome: String },
    #[error("cannot combine {left} and {right} estimates")]
    MixedEstimates { left: &'static str, right: &'static str },
    #[error("estimate shapes differ ({left} vs {right})")]
    EstimateShapeMismatch { left: usize, right: usize },
    #[error("weighted sum over an empty set of estimates")]
    EmptyEstimateSum,
    #[error("estimate extraction failed: {0}")]
    Extractor(String),
}

/// A parametric likelihood model the engine can estimate.
///
/// `O` is the outcome type of one observation and `C` the context needed to
/// make the likelihood well defined (measurement setting, batch size, ...).
pub trait Model<O, C> {
    fn name(&self) -> &str;

    /// Number of free real parameters.
    fn dimension(&self) -> usize;

    /// Draw one parameter vector from the model's prior. The returned vector
    /// must have length [`Model::dimension`].
    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Natural log of Pr(outcome | params, context); `-inf` encodes zero
    /// likelihood. Probabilities must not exceed 1.
    fn log_likelihood(&self, outcome: &O, context: &C, params: &[f64]) -> f64;

    /// Pr(outcome | params, context) in [0, 1].
    fn likelihood(&self, outcome: &O, context: &C, params: &[f64]) -> f64 {
        self.log_likelihood(outcome, context, params).exp()
    }

    /// Extract the quantity of interest from one parameter vector.
    fn estimate(&self, params: &[f64]) -> Result<Estimate, SmcError>;
}

/// A point estimate extracted from a parameter vector. Weighted averaging
/// (over particles, and over models) works within a single variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimate {
    Scalar(f64),
    Vector(Vec<f64>),
    Density(DensityMatrix),
}

impl Estimate {
    pub fn kind(&self) -> &'static str {
        match self {
            Estimate::Scalar(_) => "scalar",
            Estimate::Vector(_) => "vector",
            Estimate::Density(_) => "density",
        }
    }

    /// sum_i w_i * e_i over terms that all share one variant and shape.
    pub fn weighted_sum<I>(terms: I) -> Result<Estimate, SmcError>
    where
        I: IntoIterator<Item = Result<(f64, Estimate), SmcError>>,
    {
        enum Accum {
            Scalar(f64),
            Vector(Vec<f64>),
            Density(ComplexMatrix),
        }
        let mut accum: Option<Accum> = None;
        for term in terms {
            let (w, est) = term?;
            match (&mut accum, est) {
                (None, Estimate::Scalar(v)) => accum = Some(Accum::Scalar(w * v)),
                (None, Estimate::Vector(v)) => {
                    accum = Some(Accum::Vector(v.into_iter().map(|x| w * x).collect()))
                }
                (None, Estimate::Density(d)) => {
                    accum = Some(Accum::Density(d.matrix() * Complex64::new(w, 0.0)))
                }
                (Some(Accum::Scalar(s)), Estimate::Scalar(v)) => *s += w * v,
                (Some(Accum::Vector(acc)), Estimate::Vector(v)) => {
                    if acc.len() != v.len() {
                        return Err(SmcError::EstimateShapeMismatch { left: acc.len(), right: v.len() });
                    }
                    for (a, x) in acc.iter_mut().zip(v) {
                        *a += w * x;
                    }
                }
                (Some(Accum::Density(acc)), Estimate::Density(d)) => {
                    if acc.nrows() != d.dim() {
                        return Err(SmcError::EstimateShapeMismatch { left: acc.nrows(), right: d.dim() });
                    }
                    *acc += d.matrix() * Complex64::new(w, 0.0);
                }
                (Some(acc), other) => {
                    let left = match acc {
                        Accum::Scalar(_) => "scalar",
                        Accum::Vector(_) => "vector",
                        Accum::Density(_) => "density",
                    };
                    return Err(SmcError::MixedEstimates { left, right: other.kind() });
                }
            }
        }
        match accum {
            None => Err(SmcError::EmptyEstimateSum),
            Some(Accum::Scalar(s)) => Ok(Estimate::Scalar(s)),
            Some(Accum::Vector(v)) => Ok(Estimate::Vector(v)),
            Some(Accum::Density(m)) => DensityMatrix::new(m)
                .map(Estimate::Density)
                .map_err(|e| SmcError::Extractor(e.to_string())),
        }
    }
}

/// Normalizer of one Bayesian update, in both scales.
#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub normalizer: f64,
    pub log_normalizer: f64,
}

/// Weighted particle approximation of one model's parameter posterior.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    particles: Vec<Vec<f64>>,
    weights: Vec<f64>,
    log_evidence: f64,
}

impl ParticleCloud {
    /// Initialize with `n` prior draws at uniform weight 1/n.
    pub fn from_prior<O, C>(
        model: &(impl Model<O, C> + ?Sized),
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self, SmcError> {
        if n == 0 {
            return Err(SmcError::EmptyCloud);
        }
        let dim = model.dimension();
        let particles: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let p = model.sample_prior(rng);
                assert_eq!(
                    p.len(),
                    dim,
                    "model {} sampled a particle of length {} but declares dimension {}",
                    model.name(),
                    p.len(),
                    dim
                );
                p
            })
            .collect();
        Ok(Self { weights: vec![1.0 / n as f64; n], particles, log_evidence: 0.0 })
    }

    /// Explicit particles at uniform weight; mainly for tests and replay.
    pub fn from_particles(particles: Vec<Vec<f64>>) -> Result<Self, SmcError> {
        if particles.is_empty() {
            return Err(SmcError::EmptyCloud);
        }
        let n = particles.len();
        Ok(Self { weights: vec![1.0 / n as f64; n], particles, log_evidence: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.particles[0].len()
    }

    pub fn particles(&self) -> &[Vec<f64>] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// ln Pr(all data so far | model): the sum of log-normalizers.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    /// Pr(all data so far | model); 1 before any update.
    pub fn evidence(&self) -> f64 {
        self.log_evidence.exp()
    }

    /// Multiply weights by the likelihood of one observation and renormalize.
    /// Returns the normalizer, which also accumulates into the evidence.
    pub fn bayes_update<O: fmt::Debug, C>(
        &mut self,
        outcome: &O,
        context: &C,
        model: &(impl Model<O, C> + ?Sized),
    ) -> Result<UpdateStats, SmcError> {
        let log_liks: Vec<f64> = self
            .particles
            .iter()
            .map(|p| model.log_likelihood(outcome, context, p))
            .collect();
        for &ll in &log_liks {
            if ll.is_nan() {
                return Err(SmcError::NonFiniteLikelihood { outcome: format!("{outcome:?}") });
            }
            debug_assert!(ll <= 1e-9, "log-likelihood {ll} implies a probability above 1");
        }

        let mut new_weights: Vec<f64> = self
            .weights
            .iter()
            .zip(&log_liks)
            .map(|(&w, &ll)| w * ll.exp())
            .collect();
        let linear_norm: f64 = new_weights.iter().sum();

        let stats = if linear_norm > LINEAR_NORMALIZER_FLOOR {
            for w in &mut new_weights {
                *w /= linear_norm;
            }
            UpdateStats { normalizer: linear_norm, log_normalizer: linear_norm.ln() }
        } else {
            // log-space fallback: shift by the max joint log-weight
            let joint: Vec<f64> = self
                .weights
                .iter()
                .zip(&log_liks)
                .map(|(&w, &ll)| if w > 0.0 { w.ln() + ll } else { f64::NEG_INFINITY })
                .collect();
            let max = joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(SmcError::ZeroEvidence { outcome: format!("{outcome:?}") });
            }
            new_weights = joint.iter().map(|&s| (s - max).exp()).collect();
            let shifted_sum: f64 = new_weights.iter().sum();
            for w in &mut new_weights {
                *w /= shifted_sum;
            }
            let log_normalizer = max + shifted_sum.ln();
            UpdateStats { normalizer: log_normalizer.exp(), log_normalizer }
        };

        self.weights = new_weights;
        self.log_evidence += stats.log_normalizer;
        Ok(stats)
    }

    /// 1 / sum w_j^2: the effective number of particles, in [1, n].
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Weighted mean parameter vector.
    pub fn mean_params(&self) -> Vec<f64> {
        let dim = self.dimension();
        let mut mean = vec![0.0; dim];
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            for (m, &x) in mean.iter_mut().zip(p) {
                *m += w * x;
            }
        }
        mean
    }

    /// Liu-West rejuvenation: draw ancestors by weight, shrink toward the
    /// cloud mean and add Gaussian noise that restores the cloud covariance,
    /// x' = a x + (1 - a) mu + N(0, (1 - a^2) Sigma). Weights reset to 1/n;
    /// the accumulated evidence is untouched. With a = 1 this is plain
    /// multinomial resampling.
    pub fn resample_liu_west(&mut self, a: f64, rng: &mut dyn RngCore) {
        assert!(a > 0.0 && a <= 1.0, "shrinkage a = {a} outside (0, 1]");
        let n = self.len();
        let dim = self.dimension();
        let mean = self.mean_params();
        let picker = WeightedIndex::new(&self.weights).expect("weights are normalized");
        let noise_transform: Option<DMatrix<f64>> = if a < 1.0 {
            let cov = self.weighted_covariance(&mean);
            Some(cholesky_factor(cov) * (1.0 - a * a).sqrt())
        } else {
            None
        };

        let mut fresh = Vec::with_capacity(n);
        for _ in 0..n {
            let ancestor = &self.particles[picker.sample(rng)];
            let mut x: Vec<f64> = ancestor
                .iter()
                .zip(&mean)
                .map(|(&xi, &mi)| a * xi + (1.0 - a) * mi)
                .collect();
            if let Some(l) = &noise_transform {
                let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
                let noise = l * z;
                for (xi, ni) in x.iter_mut().zip(noise.iter()) {
                    *xi += ni;
                }
            }
            fresh.push(x);
        }
        self.particles = fresh;
        self.weights = vec![1.0 / n as f64; n];
    }

    fn weighted_covariance(&self, mean: &[f64]) -> DMatrix<f64> {
        let dim = self.dimension();
        let mut cov = DMatrix::zeros(dim, dim);
        let mut centered = vec![0.0; dim];
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (c, (&x, &m)) in centered.iter_mut().zip(p.iter().zip(mean)) {
                *c = x - m;
            }
            for i in 0..dim {
                let wi = w * centered[i];
                for j in 0..=i {
                    cov[(i, j)] += wi * centered[j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                cov[(j, i)] = cov[(i, j)];
            }
        }
        cov
    }

    /// Weighted mean of an extracted estimate, sum_j w_j f(x_j).
    pub fn posterior_mean<F>(&self, f: F) -> Result<Estimate, SmcError>
    where
        F: Fn(&[f64]) -> Result<Estimate, SmcError>,
    {
        Estimate::weighted_sum(
            self.particles
                .iter()
                .zip(&self.weights)
                .map(|(p, &w)| Ok((w, f(p)?))),
        )
    }
}

/// Lower Cholesky factor, adding escalating diagonal jitter (starting at
/// 1e-12) if the matrix is semidefinite to rounding. Falls back to the
/// diagonal square root if jitter cannot rescue the factorization.
fn cholesky_factor(cov: DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = cov.clone().cholesky() {
        return c.l();
    }
    let dim = cov.nrows();
    let mut jitter = COVARIANCE_JITTER;
    while jitter <= 1.0 {
        let bumped = &cov + DMatrix::identity(dim, dim) * jitter;
        if let Some(c) = bumped.cholesky() {
            return c.l();
        }
        jitter *= 100.0;
    }
    DMatrix::from_diagonal(&cov.diagonal().map(|v| v.max(0.0).sqrt()))
}
