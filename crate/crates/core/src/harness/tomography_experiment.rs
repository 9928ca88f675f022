//! Driver for the rank-selection tomography experiment.
//!
//! Per trial: draw a true state of the configured rank from the Ginibre
//! prior, then feed batches of randomly chosen Pauli measurements to an
//! ensemble holding one rank model per candidate rank. Each batch yields one
//! record with posteriors, per-model spectral errors against the truth, the
//! model-average error and the accumulated evidences.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::rng::substream;
use crate::selection::{ModelEnsemble, ResamplePolicy, SelectionError};
use crate::smc::{Estimate, Model};
use crate::tomography::{
    ginibre_params, mean_density_matrix, prob_plus, rho_from_params, spectral_distance,
    DensityMatrix, PauliBatch, PauliIndex, RankModel,
};

use super::config::ExperimentConfig;
use super::records::{RecordStatus, TrialRecord, RECORD_SCHEMA_VERSION};
use super::{simulate_outcome, tags, HarnessError};

pub(super) fn run(config: &ExperimentConfig) -> Result<Vec<Vec<TrialRecord>>, HarnessError> {
    (0..config.trials)
        .into_par_iter()
        .map(|trial| run_trial(config, trial))
        .collect()
}

fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<Vec<TrialRecord>, HarnessError> {
    let qubits = config.qubits;
    let mut truth_rng = substream(config.seed, &[tags::TOMOGRAPHY, trial as u64, tags::TRUTH]);
    let truth_params = ginibre_params(qubits, config.true_rank, &mut truth_rng)?;
    let truth = rho_from_params(&truth_params, qubits, config.true_rank)?;

    let mut rank_of = BTreeMap::new();
    let mut models: Vec<Box<dyn crate::smc::Model<u64, PauliBatch> + Send + Sync>> = Vec::new();
    let mut model_rngs = Vec::new();
    for (index, &rank) in config.candidate_ranks.iter().enumerate() {
        let model = RankModel::new(qubits, rank)?;
        rank_of.insert(model.name().to_string(), rank);
        models.push(Box::new(model));
        model_rngs.push(substream(
            config.seed,
            &[tags::TOMOGRAPHY, trial as u64, tags::MODEL, index as u64],
        ));
    }
    let policy = ResamplePolicy {
        ess_fraction: config.resample_threshold,
        liu_west_a: config.liu_west_a,
    };
    let mut ensemble =
        ModelEnsemble::uniform(models, config.particles_per_model, policy, model_rngs)?;

    let mut data_rng = substream(config.seed, &[tags::TOMOGRAPHY, trial as u64, tags::DATA]);
    let setting_count = 1usize << (2 * qubits);
    let mut frozen: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut records = Vec::with_capacity(config.batches);
    let mut cumulative_shots = 0u64;

    for step in 0..config.batches {
        let started = config.record_timing.then(Instant::now);
        let low = if config.include_identity_pauli { 0 } else { 1 };
        let k = data_rng.gen_range(low..setting_count);
        let index = PauliIndex::new(k, qubits).expect("k drawn in range");
        let batch = PauliBatch::new(index, config.shots_per_batch);
        let p_true = prob_plus(&truth_params, qubits, config.true_rank, batch.sigma())?;
        let successes = simulate_outcome(p_true, config.shots_per_batch, &mut data_rng);

        let update = if config.per_shot_updates {
            feed_per_shot(&mut ensemble, index, config.shots_per_batch, successes)
        } else {
            ensemble.update(&successes, &batch)
        };
        cumulative_shots += config.shots_per_batch;
        match update {
            Ok(()) => {}
            Err(SelectionError::AllModelsZeroEvidence) => {
                records.push(TrialRecord::failure(
                    trial,
                    step,
                    cumulative_shots,
                    SelectionError::AllModelsZeroEvidence.to_string(),
                ));
                break;
            }
            Err(other) => return Err(other.into()),
        }

        let record = build_record(
            config,
            trial,
            step,
            cumulative_shots,
            &ensemble,
            &rank_of,
            &frozen,
            &truth,
            started,
        )?;
        if config.prune_threshold > 0.0 {
            for name in ensemble.prune(config.prune_threshold)? {
                let error = record.per_model_error[&name];
                let evidence = record.evidence_log[&name];
                frozen.insert(name, (error, evidence));
            }
        }
        records.push(record);
    }
    Ok(records)
}

fn feed_per_shot(
    ensemble: &mut ModelEnsemble<u64, PauliBatch>,
    index: PauliIndex,
    shots: u64,
    successes: u64,
) -> Result<(), SelectionError> {
    // shot order within a batch is exchangeable, so feeding all +1 results
    // first is equivalent to any interleaving
    let single = PauliBatch::new(index, 1);
    for shot in 0..shots {
        let outcome = u64::from(shot < successes);
        ensemble.update(&outcome, &single)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_record(
    config: &ExperimentConfig,
    trial: usize,
    step: usize,
    cumulative_shots: u64,
    ensemble: &ModelEnsemble<u64, PauliBatch>,
    rank_of: &BTreeMap<String, usize>,
    frozen: &BTreeMap<String, (f64, f64)>,
    truth: &DensityMatrix,
    started: Option<Instant>,
) -> Result<TrialRecord, HarnessError> {
    let mut model_posteriors = BTreeMap::new();
    let mut per_model_error = BTreeMap::new();
    let mut evidence_log = BTreeMap::new();
    for entry in ensemble.entries() {
        let name = entry.name().to_string();
        let rank = rank_of[&name];
        let mean = mean_density_matrix(entry.cloud(), config.qubits, rank)?;
        per_model_error.insert(name.clone(), spectral_distance(&mean, truth)?);
        model_posteriors.insert(name.clone(), entry.posterior());
        evidence_log.insert(name, entry.cloud().log_evidence());
    }
    for (name, &(error, evidence)) in frozen {
        model_posteriors.insert(name.clone(), 0.0);
        per_model_error.insert(name.clone(), error);
        evidence_log.insert(name.clone(), evidence);
    }

    let mae_state = match ensemble.model_average_estimate()? {
        Estimate::Density(state) => state,
        other => unreachable!("rank models extract density estimates, got {other:?}"),
    };
    let mae_error = spectral_distance(&mae_state, truth)?;

    Ok(TrialRecord {
        schema: RECORD_SCHEMA_VERSION,
        trial_id: trial,
        step_index: step,
        status: RecordStatus::Ok,
        model_posteriors,
        per_model_error,
        mae_error: Some(mae_error),
        evidence_log,
        cumulative_shots,
        clip_count: None,
        wall_time_ms: started.map(|t| t.elapsed().as_millis() as u64),
        mae_estimate: config.record_estimates.then_some(mae_state),
        error: None,
    })
}
