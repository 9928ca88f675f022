//! Multi-model layer on top of the particle engine.
//!
//! A [`ModelEnsemble`] runs one particle cloud per candidate model against a
//! shared data stream. Posterior model probabilities follow from the priors
//! and each cloud's accumulated evidence,
//! Pr(M_k | D) proportional to Pr(M_k) * Pr(D | M_k), all handled in log
//! space. The ensemble also provides Bayes factors, pruning of negligible
//! models, and the model-average estimate sum_k Pr(M_k | D) * est_k. A
//! separate maximum-likelihood path refines the best particle for AIC/BIC
//! scoring.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::smc::{Estimate, Model, ParticleCloud, SmcError};
use crate::stats::log_sum_exp;

/// Evaluation budget of the likelihood-refinement search.
const REFINEMENT_EVAL_BUDGET: usize = 200;
/// The search stops once every coordinate step is below this.
const REFINEMENT_MIN_STEP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("ensemble needs at least one model")]
    NoModels,
    #[error("{models} models but {rngs} rng streams supplied")]
    RngCountMismatch { models: usize, rngs: usize },
    #[error("model prior weights must be positive and finite")]
    InvalidModelPrior,
    #[error("model index {index} out of range for ensemble of {len}")]
    ModelIndex { index: usize, len: usize },
    #[error("every model assigned zero evidence to the outcome")]
    AllModelsZeroEvidence,
    #[error("bayes factor {numerator}/{denominator} is infinite: denominator evidence is zero")]
    InfiniteBayesFactor { numerator: String, denominator: String },
    #[error("bayes factor {numerator}/{denominator} is indeterminate: both evidences are zero")]
    IndeterminateBayesFactor { numerator: String, denominator: String },
    #[error("prune threshold {0} must lie in [0, 1)")]
    InvalidPruneThreshold(f64),
    #[error("criteria need a nonempty data sequence")]
    EmptyData,
    #[error("no particle has support on the data")]
    NoSupport,
    #[error("measurement count must be at least 1")]
    ZeroMeasurements,
    #[error(transparent)]
    Smc(#[from] SmcError),
}

/// When and how clouds are rejuvenated: after any update that leaves the
/// effective sample size below `ess_fraction * n`, Liu-West resampling runs
/// with shrinkage `liu_west_a`. A fraction of zero disables resampling.
#[derive(Debug, Clone, Copy)]
pub struct ResamplePolicy {
    pub ess_fraction: f64,
    pub liu_west_a: f64,
}

impl Default for ResamplePolicy {
    fn default() -> Self {
        Self { ess_fraction: 0.5, liu_west_a: 0.98 }
    }
}

impl ResamplePolicy {
    pub fn disabled() -> Self {
        Self { ess_fraction: 0.0, ..Self::default() }
    }
}

/// Boxed model as stored by the ensemble and the criteria report.
pub type DynModel<O, C> = Box<dyn Model<O, C> + Send + Sync>;

/// One candidate model with its cloud, prior weight and rejuvenation stream.
///
/// A model whose likelihood hits zero on every particle is marked inactive:
/// its posterior is exactly zero from then on and it no longer receives
/// updates, but it stays in the ensemble for reporting until pruned.
pub struct EnsembleEntry<O, C> {
    model: DynModel<O, C>,
    cloud: ParticleCloud,
    rng: ChaCha8Rng,
    log_prior: f64,
    log_posterior: f64,
    active: bool,
}

impl<O, C> EnsembleEntry<O, C> {
    pub fn model(&self) -> &(dyn Model<O, C> + Send + Sync) {
        self.model.as_ref()
    }

    pub fn cloud(&self) -> &ParticleCloud {
        &self.cloud
    }

    pub fn name(&self) -> &str {
        self.model.name()
    }

    pub fn log_prior(&self) -> f64 {
        self.log_prior
    }

    pub fn log_posterior(&self) -> f64 {
        self.log_posterior
    }

    pub fn posterior(&self) -> f64 {
        self.log_posterior.exp()
    }

    pub fn is_active(&self) -> bool {
        self.active
    }
}

pub struct ModelEnsemble<O, C> {
    entries: Vec<EnsembleEntry<O, C>>,
    policy: ResamplePolicy,
}

impl<O, C> ModelEnsemble<O, C> {
    /// Build from models with explicit prior weights (normalized here) and
    /// one RNG substream per model for prior draws and rejuvenation.
    pub fn with_priors(
        models: Vec<(DynModel<O, C>, f64)>,
        particles: usize,
        policy: ResamplePolicy,
        rngs: Vec<ChaCha8Rng>,
    ) -> Result<Self, SelectionError> {
        if models.is_empty() {
            return Err(SelectionError::NoModels);
        }
        if models.len() != rngs.len() {
            return Err(SelectionError::RngCountMismatch { models: models.len(), rngs: rngs.len() });
        }
        let total: f64 = models.iter().map(|(_, w)| *w).sum();
        if !total.is_finite() || models.iter().any(|(_, w)| !(*w > 0.0 && w.is_finite())) {
            return Err(SelectionError::InvalidModelPrior);
        }
        let entries = models
            .into_iter()
            .zip(rngs)
            .map(|((model, weight), mut rng)| {
                let cloud = ParticleCloud::from_prior(model.as_ref(), particles, &mut rng)?;
                let log_prior = (weight / total).ln();
                Ok(EnsembleEntry { model, cloud, rng, log_prior, log_posterior: log_prior, active: true })
            })
            .collect::<Result<Vec<_>, SmcError>>()?;
        Ok(Self { entries, policy })
    }

    /// Build with the default uniform model prior.
    pub fn uniform(
        models: Vec<DynModel<O, C>>,
        particles: usize,
        policy: ResamplePolicy,
        rngs: Vec<ChaCha8Rng>,
    ) -> Result<Self, SelectionError> {
        Self::with_priors(models.into_iter().map(|m| (m, 1.0)).collect(), particles, policy, rngs)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[EnsembleEntry<O, C>] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> Result<&EnsembleEntry<O, C>, SelectionError> {
        self.entries
            .get(index)
            .ok_or(SelectionError::ModelIndex { index, len: self.entries.len() })
    }

    pub fn model_names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    /// Posterior model probabilities, in entry order; they sum to 1.
    pub fn posteriors(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.posterior()).collect()
    }

    /// Evidence ratio Pr(D | M_i) / Pr(D | M_j); exactly 1 for i = j and
    /// before any data. A zero-evidence denominator is an error rather than
    /// an infinity.
    pub fn bayes_factor(&self, i: usize, j: usize) -> Result<f64, SelectionError> {
        let a = self.entry(i)?;
        let b = self.entry(j)?;
        if i == j {
            return Ok(1.0);
        }
        let log_ev = |e: &EnsembleEntry<O, C>| {
            if e.active {
                e.cloud.log_evidence()
            } else {
                f64::NEG_INFINITY
            }
        };
        let (la, lb) = (log_ev(a), log_ev(b));
        if lb == f64::NEG_INFINITY {
            let numerator = a.name().to_string();
            let denominator = b.name().to_string();
            return Err(if la == f64::NEG_INFINITY {
                SelectionError::IndeterminateBayesFactor { numerator, denominator }
            } else {
                SelectionError::InfiniteBayesFactor { numerator, denominator }
            });
        }
        Ok((la - lb).exp())
    }

    /// The model-average estimate sum_k Pr(M_k | D) * (posterior mean of
    /// model k). All models must extract the same estimate variant.
    pub fn model_average_estimate(&self) -> Result<Estimate, SelectionError> {
        if !self.entries.iter().any(|e| e.active) {
            return Err(SelectionError::AllModelsZeroEvidence);
        }
        Estimate::weighted_sum(self.entries.iter().filter(|e| e.active).map(|e| {
            let mean = e.cloud.posterior_mean(|p| e.model.estimate(p))?;
            Ok((e.posterior(), mean))
        }))
        .map_err(SelectionError::from)
    }

    /// Remove models whose posterior falls below `threshold`, always keeping
    /// the highest-posterior model, and renormalize over the survivors.
    /// Returns the removed model names.
    pub fn prune(&mut self, threshold: f64) -> Result<Vec<String>, SelectionError> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(SelectionError::InvalidPruneThreshold(threshold));
        }
        let posteriors = self.posteriors();
        let best = posteriors
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.total_cmp(b))
            .map(|(i, _)| i)
            .expect("ensemble is never empty");
        let mut removed = Vec::new();
        let mut index = 0;
        self.entries.retain(|entry| {
            let keep = index == best || posteriors[index] >= threshold;
            if !keep {
                removed.push(entry.name().to_string());
            }
            index += 1;
            keep
        });
        if !removed.is_empty() {
            self.renormalize()?;
        }
        Ok(removed)
    }

    fn renormalize(&mut self) -> Result<(), SelectionError> {
        let logs: Vec<f64> = self.entries.iter().map(|e| e.log_posterior).collect();
        let total = log_sum_exp(&logs);
        if total == f64::NEG_INFINITY {
            return Err(SelectionError::AllModelsZeroEvidence);
        }
        for e in &mut self.entries {
            e.log_posterior -= total;
        }
        Ok(())
    }
}

enum EntryUpdate {
    Skipped,
    Updated { log_normalizer: f64 },
    Died,
}

impl<O: fmt::Debug + Sync, C: Sync> ModelEnsemble<O, C> {
    /// Feed one observation to every active model: Bayesian weight update,
    /// policy-driven rejuvenation, then model-posterior renormalization. A
    /// model with zero evidence on the outcome goes inactive with posterior
    /// exactly zero; the update fails only if no model survives it.
    pub fn update(&mut self, outcome: &O, context: &C) -> Result<(), SelectionError> {
        let policy = self.policy;
        let results: Vec<Result<EntryUpdate, SmcError>> = self
            .entries
            .par_iter_mut()
            .map(|entry| {
                if !entry.active {
                    return Ok(EntryUpdate::Skipped);
                }
                match entry.cloud.bayes_update(outcome, context, entry.model.as_ref()) {
                    Ok(stats) => {
                        let n = entry.cloud.len() as f64;
                        if policy.ess_fraction > 0.0
                            && entry.cloud.effective_sample_size() < policy.ess_fraction * n
                        {
                            entry.cloud.resample_liu_west(policy.liu_west_a, &mut entry.rng);
                        }
                        Ok(EntryUpdate::Updated { log_normalizer: stats.log_normalizer })
                    }
                    Err(SmcError::ZeroEvidence { .. }) => Ok(EntryUpdate::Died),
                    Err(other) => Err(other),
                }
            })
            .collect();

        for (entry, result) in self.entries.iter_mut().zip(results) {
            match result? {
                EntryUpdate::Skipped => {}
                EntryUpdate::Updated { log_normalizer } => entry.log_posterior += log_normalizer,
                EntryUpdate::Died => {
                    entry.active = false;
                    entry.log_posterior = f64::NEG_INFINITY;
                }
            }
        }
        self.renormalize()
    }
}

/// Maximum log-likelihood of `model` over `data`: the best particle of
/// `cloud` refined by a derivative-free coordinate search (quadratic probes
/// with step halving, at most 200 extra likelihood-sum evaluations, stopping
/// once steps shrink below 1e-6). The result never falls below the best
/// particle's value.
pub fn max_log_likelihood<O, C>(
    model: &(impl Model<O, C> + ?Sized),
    data: &[(O, C)],
    cloud: &ParticleCloud,
) -> Result<(Vec<f64>, f64), SelectionError> {
    if data.is_empty() {
        return Err(SelectionError::EmptyData);
    }
    let total = |x: &[f64]| -> f64 {
        data.iter().map(|(o, c)| model.log_likelihood(o, c, x)).sum()
    };

    let mut best_value = f64::NEG_INFINITY;
    let mut best_index = 0;
    for (j, p) in cloud.particles().iter().enumerate() {
        let v = total(p);
        if v > best_value {
            best_value = v;
            best_index = j;
        }
    }
    if best_value == f64::NEG_INFINITY {
        return Err(SelectionError::NoSupport);
    }

    let mut x = cloud.particles()[best_index].clone();
    let mut fx = best_value;
    let dim = x.len();

    // start steps at the cloud's own per-coordinate spread
    let mean = cloud.mean_params();
    let mut steps: Vec<f64> = (0..dim)
        .map(|i| {
            let var: f64 = cloud
                .particles()
                .iter()
                .zip(cloud.weights())
                .map(|(p, &w)| w * (p[i] - mean[i]) * (p[i] - mean[i]))
                .sum();
            var.sqrt().max(1e-3)
        })
        .collect();

    let mut evals = 0usize;
    let mut probe = x.clone();
    while evals + 2 <= REFINEMENT_EVAL_BUDGET
        && steps.iter().cloned().fold(0.0, f64::max) >= REFINEMENT_MIN_STEP
    {
        let mut improved = false;
        for i in 0..dim {
            if evals + 2 > REFINEMENT_EVAL_BUDGET {
                break;
            }
            let s = steps[i];
            let base = x[i];
            probe.copy_from_slice(&x);
            probe[i] = base + s;
            let f_plus = total(&probe);
            probe[i] = base - s;
            let f_minus = total(&probe);
            evals += 2;

            let mut cand_delta = 0.0;
            let mut cand_value = fx;
            if f_plus > cand_value {
                cand_delta = s;
                cand_value = f_plus;
            }
            if f_minus > cand_value {
                cand_delta = -s;
                cand_value = f_minus;
            }
            let curvature = 2.0 * fx - f_plus - f_minus;
            if f_plus.is_finite() && f_minus.is_finite() && curvature > 0.0 && evals < REFINEMENT_EVAL_BUDGET
            {
                let vertex = (0.5 * s * (f_plus - f_minus) / curvature).clamp(-s, s);
                probe[i] = base + vertex;
                let f_vertex = total(&probe);
                evals += 1;
                if f_vertex > cand_value {
                    cand_delta = vertex;
                    cand_value = f_vertex;
                }
            }
            if cand_value > fx {
                x[i] = base + cand_delta;
                fx = cand_value;
                improved = true;
            }
        }
        if !improved {
            for s in &mut steps {
                *s *= 0.5;
            }
        }
    }
    Ok((x, fx))
}

/// AIC in larger-is-better form: the maximized log-likelihood penalized by
/// the parameter count directly, L - d (not the -2 L + 2 d scale).
pub fn aic(max_log_likelihood: f64, dimension: usize) -> f64 {
    max_log_likelihood - dimension as f64
}

/// BIC in the same larger-is-better form: L - (d / 2) ln N, where N counts
/// elementary measurements.
pub fn bic(max_log_likelihood: f64, dimension: usize, n_measurements: usize) -> Result<f64, SelectionError> {
    if n_measurements == 0 {
        return Err(SelectionError::ZeroMeasurements);
    }
    Ok(max_log_likelihood - 0.5 * dimension as f64 * (n_measurements as f64).ln())
}

/// Information-criterion summary of one model against one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionScore {
    pub model_name: String,
    pub max_log_likelihood: f64,
    pub dimension: usize,
    pub n_measurements: usize,
    pub aic: f64,
    pub bic: f64,
}

impl CriterionScore {
    pub fn new(
        model_name: String,
        max_log_likelihood: f64,
        dimension: usize,
        n_measurements: usize,
    ) -> Result<Self, SelectionError> {
        Ok(Self {
            model_name,
            max_log_likelihood,
            dimension,
            n_measurements,
            aic: aic(max_log_likelihood, dimension),
            bic: bic(max_log_likelihood, dimension, n_measurements)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coin::CoinModel;
    use crate::rng::substream;
    use approx::assert_relative_eq;
    use rand::prelude::*;

    /// Likelihood looked up by outcome index and model label; parameters are
    /// inert, so normalizers are exact.
    struct TableModel {
        name: String,
        table: Vec<f64>,
    }

    impl TableModel {
        fn boxed(name: &str, table: Vec<f64>) -> DynModel<usize, ()> {
            Box::new(Self { name: name.to_string(), table })
        }
    }

    impl Model<usize, ()> for TableModel {
        fn name(&self) -> &str {
            &self.name
        }
        fn dimension(&self) -> usize {
            1
        }
        fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
            vec![rng.gen::<f64>()]
        }
        fn log_likelihood(&self, outcome: &usize, _c: &(), _p: &[f64]) -> f64 {
            self.table[*outcome].ln()
        }
        fn estimate(&self, params: &[f64]) -> Result<Estimate, SmcError> {
            Ok(Estimate::Scalar(params[0]))
        }
    }

    fn rngs(n: usize) -> Vec<ChaCha8Rng> {
        (0..n).map(|i| substream(1000, &[i as u64])).collect()
    }

    fn table_ensemble(tables: Vec<(&str, Vec<f64>)>) -> ModelEnsemble<usize, ()> {
        let models = tables
            .into_iter()
            .map(|(name, t)| TableModel::boxed(name, t))
            .collect::<Vec<_>>();
        let n = models.len();
        ModelEnsemble::uniform(models, 16, ResamplePolicy::disabled(), rngs(n)).unwrap()
    }

    #[test]
    fn posteriors_follow_normalizer_ratios() {
        // per-outcome normalizers 0.4 and 0.1 at equal prior: (0.8, 0.2)
        let mut ens = table_ensemble(vec![("m0", vec![0.4]), ("m1", vec![0.1])]);
        ens.update(&0, &()).unwrap();
        let post = ens.posteriors();
        assert_relative_eq!(post[0], 0.8, max_relative = 1e-12);
        assert_relative_eq!(post[1], 0.2, max_relative = 1e-12);
        assert!((post.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn three_model_update() {
        let mut ens = table_ensemble(vec![
            ("a", vec![0.2]),
            ("b", vec![0.2]),
            ("c", vec![0.6]),
        ]);
        ens.update(&0, &()).unwrap();
        let post = ens.posteriors();
        assert_relative_eq!(post[0], 0.2, max_relative = 1e-12);
        assert_relative_eq!(post[1], 0.2, max_relative = 1e-12);
        assert_relative_eq!(post[2], 0.6, max_relative = 1e-12);
    }

    #[test]
    fn identical_models_stay_balanced() {
        let model_a: DynModel<u8, ()> = Box::new(CoinModel::new());
        let model_b: DynModel<u8, ()> = Box::new(CoinModel::new());
        // same RNG stream for both: identical particle sets
        let shared = vec![substream(5, &[0]), substream(5, &[0])];
        let mut ens =
            ModelEnsemble::uniform(vec![model_a, model_b], 256, ResamplePolicy::default(), shared)
                .unwrap();
        for d in [1u8, 0, 1, 1, 0, 1, 1] {
            ens.update(&d, &()).unwrap();
            let post = ens.posteriors();
            assert!((post[0] - 0.5).abs() <= 1e-10, "posterior drifted: {post:?}");
        }
    }

    #[test]
    fn nonuniform_priors_shift_posteriors() {
        let models = vec![
            (TableModel::boxed("a", vec![0.5]), 3.0),
            (TableModel::boxed("b", vec![0.5]), 1.0),
        ];
        let mut ens =
            ModelEnsemble::with_priors(models, 8, ResamplePolicy::disabled(), rngs(2)).unwrap();
        // equal likelihoods: posterior stays at the (normalized) prior
        ens.update(&0, &()).unwrap();
        let post = ens.posteriors();
        assert_relative_eq!(post[0], 0.75, max_relative = 1e-12);
        assert_relative_eq!(post[1], 0.25, max_relative = 1e-12);
    }

    #[test]
    fn construction_validation() {
        assert!(matches!(
            ModelEnsemble::<usize, ()>::uniform(vec![], 8, ResamplePolicy::default(), vec![]),
            Err(SelectionError::NoModels)
        ));
        let models = vec![TableModel::boxed("a", vec![0.5])];
        assert!(matches!(
            ModelEnsemble::uniform(models, 8, ResamplePolicy::default(), rngs(2)),
            Err(SelectionError::RngCountMismatch { .. })
        ));
        let weighted = vec![(TableModel::boxed("a", vec![0.5]), -1.0)];
        assert!(matches!(
            ModelEnsemble::with_priors(weighted, 8, ResamplePolicy::default(), rngs(1)),
            Err(SelectionError::InvalidModelPrior)
        ));
        let models = vec![TableModel::boxed("a", vec![0.5])];
        assert!(matches!(
            ModelEnsemble::uniform(models, 0, ResamplePolicy::default(), rngs(1)),
            Err(SelectionError::Smc(SmcError::EmptyCloud))
        ));
    }

    #[test]
    fn zero_evidence_model_goes_inactive() {
        let mut ens = table_ensemble(vec![("alive", vec![0.5, 0.5]), ("dead", vec![0.5, 0.0])]);
        ens.update(&0, &()).unwrap();
        assert!(ens.entries()[1].is_active());
        ens.update(&1, &()).unwrap();
        assert!(!ens.entries()[1].is_active());
        let post = ens.posteriors();
        assert_eq!(post[1], 0.0);
        assert_relative_eq!(post[0], 1.0, max_relative = 1e-12);
        // the survivor keeps updating
        ens.update(&0, &()).unwrap();
        assert_eq!(ens.posteriors()[1], 0.0);
        assert_eq!(ens.model_names(), vec!["alive", "dead"]);
    }

    #[test]
    fn all_models_dead_is_an_error() {
        let mut ens = table_ensemble(vec![("a", vec![0.0]), ("b", vec![0.0])]);
        assert!(matches!(ens.update(&0, &()), Err(SelectionError::AllModelsZeroEvidence)));
    }

    #[test]
    fn bayes_factor_identities() {
        let mut ens = table_ensemble(vec![("a", vec![0.4]), ("b", vec![0.1])]);
        assert_eq!(ens.bayes_factor(0, 1).unwrap(), 1.0); // no data yet
        ens.update(&0, &()).unwrap();
        assert_relative_eq!(ens.bayes_factor(0, 1).unwrap(), 4.0, max_relative = 1e-12);
        assert_eq!(ens.bayes_factor(1, 1).unwrap(), 1.0);
        assert_relative_eq!(ens.bayes_factor(1, 0).unwrap(), 0.25, max_relative = 1e-12);
        assert!(matches!(ens.bayes_factor(0, 2), Err(SelectionError::ModelIndex { .. })));
    }

    #[test]
    fn bayes_factor_transitivity() {
        let mut ens = table_ensemble(vec![
            ("a", vec![0.7, 0.2]),
            ("b", vec![0.4, 0.4]),
            ("c", vec![0.1, 0.8]),
        ]);
        for d in [0usize, 1, 0, 0, 1] {
            ens.update(&d, &()).unwrap();
        }
        let ab = ens.bayes_factor(0, 1).unwrap();
        let bc = ens.bayes_factor(1, 2).unwrap();
        let ac = ens.bayes_factor(0, 2).unwrap();
        assert_relative_eq!(ab * bc, ac, max_relative = 1e-9);
    }

    #[test]
    fn posterior_ratio_equals_bayes_factor_under_uniform_prior() {
        let mut ens = table_ensemble(vec![("a", vec![0.7, 0.2]), ("b", vec![0.5, 0.5])]);
        for d in [0usize, 1, 1, 0] {
            ens.update(&d, &()).unwrap();
        }
        let post = ens.posteriors();
        assert_relative_eq!(
            post[0] / post[1],
            ens.bayes_factor(0, 1).unwrap(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn bayes_factor_zero_evidence_errors() {
        let mut ens = table_ensemble(vec![("alive", vec![0.5, 0.5]), ("dead", vec![0.5, 0.0])]);
        ens.update(&1, &()).unwrap();
        assert!(matches!(
            ens.bayes_factor(0, 1),
            Err(SelectionError::InfiniteBayesFactor { .. })
        ));
        assert_eq!(ens.bayes_factor(1, 0).unwrap(), 0.0);
    }

    #[test]
    fn posterior_decomposition_is_rederivable() {
        let mut ens = table_ensemble(vec![
            ("a", vec![0.7, 0.2]),
            ("b", vec![0.4, 0.4]),
            ("c", vec![0.15, 0.6]),
        ]);
        for d in [0usize, 1, 0, 1, 1, 0] {
            ens.update(&d, &()).unwrap();
        }
        let joint: Vec<f64> = ens
            .entries()
            .iter()
            .map(|e| e.log_prior() + e.cloud().log_evidence())
            .collect();
        let total = log_sum_exp(&joint);
        for (entry, j) in ens.entries().iter().zip(&joint) {
            assert!(
                (entry.log_posterior() - (j - total)).abs() <= 1e-10,
                "stored {} vs rederived {}",
                entry.log_posterior(),
                j - total
            );
        }
    }

    #[test]
    fn model_average_combines_posterior_means() {
        struct Fixed {
            name: String,
            value: f64,
        }
        impl Model<usize, ()> for Fixed {
            fn name(&self) -> &str {
                &self.name
            }
            fn dimension(&self) -> usize {
                1
            }
            fn sample_prior(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
                vec![self.value]
            }
            fn log_likelihood(&self, _o: &usize, _c: &(), _p: &[f64]) -> f64 {
                0.5f64.ln()
            }
            fn estimate(&self, params: &[f64]) -> Result<Estimate, SmcError> {
                Ok(Estimate::Scalar(params[0]))
            }
        }
        let low: DynModel<usize, ()> = Box::new(Fixed { name: "low".into(), value: 0.0 });
        let high: DynModel<usize, ()> = Box::new(Fixed { name: "high".into(), value: 1.0 });
        let ens = ModelEnsemble::uniform(
            vec![low, high],
            32,
            ResamplePolicy::disabled(),
            rngs(2),
        )
        .unwrap();
        // equal posteriors, estimates 0 and 1: average 0.5
        assert_eq!(ens.model_average_estimate().unwrap(), Estimate::Scalar(0.5));
    }

    #[test]
    fn model_average_degenerate_posterior_returns_that_model() {
        let mut ens = table_ensemble(vec![("alive", vec![0.5, 0.5]), ("dead", vec![0.5, 0.0])]);
        ens.update(&1, &()).unwrap();
        // only "alive" remains; its posterior mean is the cloud mean
        let expect = ens.entries()[0]
            .cloud()
            .posterior_mean(|p| Ok(Estimate::Scalar(p[0])))
            .unwrap();
        assert_eq!(ens.model_average_estimate().unwrap(), expect);
    }

    #[test]
    fn prune_rules() {
        let mut ens = table_ensemble(vec![
            ("a", vec![0.6]),
            ("b", vec![0.3]),
            ("c", vec![0.1]),
        ]);
        ens.update(&0, &()).unwrap();
        // posteriors (0.6, 0.3, 0.1)
        assert!(matches!(ens.prune(1.0), Err(SelectionError::InvalidPruneThreshold(_))));
        assert_eq!(ens.prune(0.0).unwrap(), Vec::<String>::new());
        assert_eq!(ens.prune(0.05).unwrap(), Vec::<String>::new());
        let removed = ens.prune(0.2).unwrap();
        assert_eq!(removed, vec!["c".to_string()]);
        let post = ens.posteriors();
        assert_relative_eq!(post[0], 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(post[1], 1.0 / 3.0, max_relative = 1e-12);
        assert!((post.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn prune_never_removes_the_leader() {
        let mut ens = table_ensemble(vec![("a", vec![0.9]), ("b", vec![0.1])]);
        ens.update(&0, &()).unwrap();
        // even a threshold above every posterior keeps the leader
        let removed = ens.prune(0.95).unwrap();
        assert_eq!(removed, vec!["b".to_string()]);
        assert_eq!(ens.len(), 1);
        assert_relative_eq!(ens.posteriors()[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn refinement_recovers_coin_mle() {
        // 7 heads, 3 tails: x_hat = 0.7, log-likelihood 7 ln 0.7 + 3 ln 0.3
        let coin = CoinModel::new();
        let data: Vec<(u8, ())> = [1u8, 1, 1, 1, 1, 1, 1, 0, 0, 0]
            .into_iter()
            .map(|d| (d, ()))
            .collect();
        let mut rng = substream(77, &[0]);
        let cloud = ParticleCloud::from_prior(&coin, 200, &mut rng).unwrap();
        let (x, ll) = max_log_likelihood(&coin, &data, &cloud).unwrap();
        let expect = 7.0 * 0.7f64.ln() + 3.0 * 0.3f64.ln();
        assert!((x[0] - 0.7).abs() <= 0.01, "x_hat = {}", x[0]);
        assert!((ll - expect).abs() <= 0.01, "ll = {ll} vs {expect}");
        assert!(ll <= 0.0);
    }

    #[test]
    fn refinement_never_decreases() {
        let coin = CoinModel::new();
        let data: Vec<(u8, ())> = [1u8, 0, 1].into_iter().map(|d| (d, ())).collect();
        let single = ParticleCloud::from_particles(vec![vec![0.2]]).unwrap();
        let start: f64 = data
            .iter()
            .map(|(o, c)| coin.log_likelihood(o, c, &[0.2]))
            .sum();
        let (_, refined) = max_log_likelihood(&coin, &data, &single).unwrap();
        assert!(refined >= start);
    }

    #[test]
    fn refinement_edge_cases() {
        let coin = CoinModel::new();
        let cloud = ParticleCloud::from_particles(vec![vec![0.4]]).unwrap();
        assert!(matches!(
            max_log_likelihood(&coin, &[], &cloud),
            Err(SelectionError::EmptyData)
        ));

        // constant likelihood: any particle, value ln(c)
        struct Flat;
        impl Model<usize, ()> for Flat {
            fn name(&self) -> &str {
                "flat"
            }
            fn dimension(&self) -> usize {
                1
            }
            fn sample_prior(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
                vec![0.0]
            }
            fn log_likelihood(&self, _o: &usize, _c: &(), _p: &[f64]) -> f64 {
                0.3f64.ln()
            }
            fn estimate(&self, _p: &[f64]) -> Result<Estimate, SmcError> {
                Ok(Estimate::Scalar(0.0))
            }
        }
        let cloud = ParticleCloud::from_particles(vec![vec![1.0], vec![2.0]]).unwrap();
        let (_, ll) = max_log_likelihood(&Flat, &[(0, ()), (1, ())], &cloud).unwrap();
        assert_relative_eq!(ll, 2.0 * 0.3f64.ln(), max_relative = 1e-12);

        // no support anywhere
        let out_of_range = ParticleCloud::from_particles(vec![vec![-1.0]]).unwrap();
        assert!(matches!(
            max_log_likelihood(&coin, &[(1u8, ())], &out_of_range),
            Err(SelectionError::NoSupport)
        ));
    }

    #[test]
    fn criterion_formulas() {
        assert_eq!(aic(-100.0, 2), -102.0);
        assert_eq!(aic(-100.0, 0), -100.0);
        assert_relative_eq!(
            bic(-100.0, 2, 100).unwrap(),
            -100.0 - 100.0f64.ln(),
            max_relative = 1e-15
        );
        assert_eq!(bic(-100.0, 0, 50).unwrap(), -100.0);
        assert!(matches!(bic(-100.0, 2, 0), Err(SelectionError::ZeroMeasurements)));

        let score = CriterionScore::new("m".into(), -10.0, 3, 1000).unwrap();
        assert_eq!(score.aic, -13.0);
        assert_relative_eq!(score.bic, -10.0 - 1.5 * 1000.0f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn equal_dimension_models_rank_identically_under_both_criteria() {
        let cases = [(-120.0, -119.0), (-5.0, -50.0), (0.0, -1e-9)];
        for (la, lb) in cases {
            let (d, n) = (4, 777);
            let order_aic = aic(la, d) > aic(lb, d);
            let order_bic = bic(la, d, n).unwrap() > bic(lb, d, n).unwrap();
            assert_eq!(order_aic, order_bic);
        }
    }
}
