//! Information-criterion comparison of candidate models on one dataset.
//!
//! The maximized log-likelihood backing AIC and BIC is approximated: each
//! model's particle cloud is fitted on the data and the best particle is
//! refined by the bounded coordinate search in [`max_log_likelihood`]. Rows
//! are sorted by BIC, best first, with name order breaking ties.

use rand_chacha::ChaCha8Rng;

use crate::rb::{rb0_prior, rb1_prior, Rb0Model, Rb1Model, RbContext};
use crate::rng::substream;
use crate::selection::{max_log_likelihood, CriterionScore, DynModel, ResamplePolicy, SelectionError};
use crate::smc::{ParticleCloud, SmcError};
use crate::tomography::{ginibre_params, prob_plus, PauliBatch, PauliIndex, RankModel};

use super::config::{ExperimentConfig, ExperimentKind};
use super::{simulate_outcome, tags, HarnessError};

use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use rand::Rng;

/// Score every model in `models` against the same `data`.
///
/// Each model is fitted with its own `particles`-strong cloud, rejuvenated
/// per `policy`, before the refinement step. A single observation that no
/// particle supports is skipped during the fit (the cloud stays unchanged);
/// whether the model supports the dataset as a whole is decided by the
/// refinement, which fails with [`SelectionError::NoSupport`] otherwise.
/// `n_measurements` is the elementary measurement count entering BIC, which
/// may exceed `data.len()` when observations are binomial batches.
pub fn run_criteria_report<O, C>(
    models: &[DynModel<O, C>],
    data: &[(O, C)],
    n_measurements: usize,
    particles: usize,
    policy: ResamplePolicy,
    rngs: Vec<ChaCha8Rng>,
) -> Result<Vec<CriterionScore>, SelectionError>
where
    O: std::fmt::Debug,
{
    if data.is_empty() {
        return Err(SelectionError::EmptyData);
    }
    if rngs.len() != models.len() {
        return Err(SelectionError::RngCountMismatch { models: models.len(), rngs: rngs.len() });
    }

    let mut scores = Vec::with_capacity(models.len());
    for (model, mut rng) in models.iter().zip(rngs) {
        let mut cloud = ParticleCloud::from_prior(model.as_ref(), particles, &mut rng)?;
        for (outcome, context) in data {
            match cloud.bayes_update(outcome, context, model.as_ref()) {
                Ok(_) => {
                    let n = cloud.len() as f64;
                    if policy.ess_fraction > 0.0
                        && cloud.effective_sample_size() < policy.ess_fraction * n
                    {
                        cloud.resample_liu_west(policy.liu_west_a, &mut rng);
                    }
                }
                Err(SmcError::ZeroEvidence { .. }) => {}
                Err(other) => return Err(other.into()),
            }
        }
        let (_, value) = max_log_likelihood(model.as_ref(), data, &cloud)?;
        scores.push(CriterionScore::new(
            model.name().to_string(),
            value,
            model.dimension(),
            n_measurements,
        )?);
    }
    scores.sort_by(|a, b| b.bic.total_cmp(&a.bic).then_with(|| a.model_name.cmp(&b.model_name)));
    Ok(scores)
}

/// Simulate one dataset per the experiment config and score its candidate
/// models. Tomography compares the rank models on batched random-Pauli
/// counts; the decay experiment compares the zeroth- and first-order models
/// on one full sweep series.
pub fn run(config: &ExperimentConfig) -> Result<Vec<CriterionScore>, HarnessError> {
    config.validate()?;
    match config.experiment {
        ExperimentKind::Tomography => tomography_report(config),
        ExperimentKind::Rb => rb_report(config),
    }
}

fn tomography_report(config: &ExperimentConfig) -> Result<Vec<CriterionScore>, HarnessError> {
    let qubits = config.qubits;
    let mut truth_rng = substream(config.seed, &[tags::CRITERIA, tags::TOMOGRAPHY, tags::TRUTH]);
    let truth_params = ginibre_params(qubits, config.true_rank, &mut truth_rng)?;

    let mut data_rng = substream(config.seed, &[tags::CRITERIA, tags::TOMOGRAPHY, tags::DATA]);
    let setting_count = 1usize << (2 * qubits);
    let low = if config.include_identity_pauli { 0 } else { 1 };
    let mut data: Vec<(u64, PauliBatch)> = Vec::new();
    for _ in 0..config.batches {
        let k = data_rng.gen_range(low..setting_count);
        let index = PauliIndex::new(k, qubits).expect("k drawn in range");
        let batch = PauliBatch::new(index, config.shots_per_batch);
        let p_true = prob_plus(&truth_params, qubits, config.true_rank, batch.sigma())?;
        let successes = simulate_outcome(p_true, config.shots_per_batch, &mut data_rng);
        if config.per_shot_updates {
            for shot in 0..config.shots_per_batch {
                let hit = u64::from(shot < successes);
                data.push((hit, PauliBatch::new(index, 1)));
            }
        } else {
            data.push((successes, batch));
        }
    }

    let mut models: Vec<DynModel<u64, PauliBatch>> = Vec::new();
    let mut rngs = Vec::new();
    for (index, &rank) in config.candidate_ranks.iter().enumerate() {
        models.push(Box::new(RankModel::new(qubits, rank)?));
        rngs.push(substream(
            config.seed,
            &[tags::CRITERIA, tags::TOMOGRAPHY, tags::MODEL, index as u64],
        ));
    }

    let n_measurements = config.batches * config.shots_per_batch as usize;
    let policy = ResamplePolicy {
        ess_fraction: config.resample_threshold,
        liu_west_a: config.liu_west_a,
    };
    Ok(run_criteria_report(
        &models,
        &data,
        n_measurements,
        config.particles_per_model,
        policy,
        rngs,
    )?)
}

fn rb_report(config: &ExperimentConfig) -> Result<Vec<CriterionScore>, HarnessError> {
    let mut truth_rng = substream(config.seed, &[tags::CRITERIA, tags::RB, tags::TRUTH]);
    let truth = super::rb_experiment::TruthCurve::sample(config, &mut truth_rng);

    let mut lengths = config.sequence_lengths.clone();
    lengths.sort_unstable();
    let mut data_rng = substream(config.seed, &[tags::CRITERIA, tags::RB, tags::DATA]);
    let mut data: Vec<(u64, RbContext)> = Vec::new();
    for _ in 0..config.batches {
        for &length in &lengths {
            let (p_survive, _) = crate::rb::clip_survival(truth.survival(length));
            let survivals =
                simulate_outcome(p_survive, config.repetitions_per_length, &mut data_rng);
            data.push((survivals, RbContext::new(length, config.repetitions_per_length)));
        }
    }

    let clip_events = Arc::new(AtomicU64::new(0));
    let models: Vec<DynModel<u64, RbContext>> = vec![
        Box::new(Rb0Model::new(rb0_prior(config.prior_scale), clip_events.clone())?),
        Box::new(Rb1Model::new(
            rb1_prior(config.rb_prior_set, config.prior_scale),
            clip_events,
        )?),
    ];
    let rngs = (0..models.len())
        .map(|index| {
            substream(config.seed, &[tags::CRITERIA, tags::RB, tags::MODEL, index as u64])
        })
        .collect();

    let n_measurements =
        config.batches * lengths.len() * config.repetitions_per_length as usize;
    let policy = ResamplePolicy {
        ess_fraction: config.resample_threshold,
        liu_west_a: config.liu_west_a,
    };
    Ok(run_criteria_report(
        &models,
        &data,
        n_measurements,
        config.particles_per_model,
        policy,
        rngs,
    )?)
}

/// Fixed-width text table of a score list, one row per model.
pub fn render_table(scores: &[CriterionScore]) -> String {
    let mut out = String::from(
        "model                max-log-lik          aic          bic    d          N\n",
    );
    for s in scores {
        out.push_str(&format!(
            "{:<18} {:>13.4} {:>12.4} {:>12.4} {:>4} {:>10}\n",
            s.model_name, s.max_log_likelihood, s.aic, s.bic, s.dimension, s.n_measurements
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coin::CoinModel;

    fn coin_dataset(p: f64, n: usize, seed: u64) -> Vec<(u8, ())> {
        let mut rng = substream(seed, &[9]);
        (0..n).map(|_| (u8::from(rng.gen_bool(p)), ())).collect()
    }

    fn coin_report(data: &[(u8, ())], seed: u64) -> Vec<CriterionScore> {
        let models: Vec<DynModel<u8, ()>> = vec![
            Box::new(CoinModel::new()),
            Box::new(CoinModel::with_inert_params(1)),
        ];
        let rngs = vec![substream(seed, &[1]), substream(seed, &[2])];
        run_criteria_report(&models, data, data.len(), 1000, ResamplePolicy::default(), rngs)
            .unwrap()
    }

    #[test]
    fn single_model_row_satisfies_aic_identity() {
        let data = coin_dataset(0.6, 200, 7);
        let models: Vec<DynModel<u8, ()>> = vec![Box::new(CoinModel::new())];
        let rngs = vec![substream(7, &[1])];
        let scores =
            run_criteria_report(&models, &data, data.len(), 500, ResamplePolicy::default(), rngs)
                .unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0].aic, scores[0].max_log_likelihood - 1.0);
    }

    #[test]
    fn empty_data_is_rejected() {
        let models: Vec<DynModel<u8, ()>> = vec![Box::new(CoinModel::new())];
        let rngs = vec![substream(7, &[1])];
        let err = run_criteria_report(&models, &[], 0, 100, ResamplePolicy::default(), rngs)
            .unwrap_err();
        assert!(matches!(err, SelectionError::EmptyData));
    }

    #[test]
    fn bic_prefers_the_smaller_nested_coin_model() {
        // The padded coin fits no better (its extra parameter is inert), so
        // the (d/2) ln N penalty must put the plain coin first.
        let data = coin_dataset(0.35, 10_000, 11);
        let scores = coin_report(&data, 11);
        assert_eq!(scores[0].model_name, "coin");
        assert!(scores[0].bic > scores[1].bic);
    }

    #[test]
    fn rows_arrive_sorted_by_bic() {
        let data = coin_dataset(0.5, 500, 3);
        let scores = coin_report(&data, 3);
        assert!(scores.windows(2).all(|w| w[0].bic >= w[1].bic));
    }

    #[test]
    fn table_has_one_line_per_model_plus_header() {
        let data = coin_dataset(0.5, 100, 5);
        let scores = coin_report(&data, 5);
        let table = render_table(&scores);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(1).unwrap().contains("coin"));
    }
}
