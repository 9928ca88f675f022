//! Driver for the randomized-benchmarking model-selection experiment.
//!
//! Per trial: draw true decay parameters from the configured truth model's
//! prior, then run sweeps over the sequence-length grid. Every sweep feeds
//! one binomial survival count per length to the two-model ensemble (zeroth-
//! and first-order) and emits one record tracking posteriors, the error of
//! each model's decay-rate estimate p, the model-average error and the
//! cumulative count of survival-probability clip events.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::rb::{
    clip_survival, rb0_prior, rb0_survival, rb1_prior, rb1_survival, Rb0Model, Rb0Params,
    Rb1Model, Rb1Params, RbContext,
};
use crate::rng::substream;
use crate::selection::{ModelEnsemble, ResamplePolicy, SelectionError};
use crate::smc::Estimate;

use super::config::{ExperimentConfig, RbTrueModel};
use super::records::{RecordStatus, TrialRecord, RECORD_SCHEMA_VERSION};
use super::{simulate_outcome, tags, HarnessError};

pub(super) fn run(config: &ExperimentConfig) -> Result<Vec<Vec<TrialRecord>>, HarnessError> {
    (0..config.trials)
        .into_par_iter()
        .map(|trial| run_trial(config, trial))
        .collect()
}

fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut truth_rng = substream(config.seed, &[tags::RB, trial as u64, tags::TRUTH]);
    let truth = TruthCurve::sample(config, &mut truth_rng);

    let clip_events = Arc::new(AtomicU64::new(0));
    let zeroth = Rb0Model::new(rb0_prior(config.prior_scale), clip_events.clone())?;
    let first = Rb1Model::new(
        rb1_prior(config.rb_prior_set, config.prior_scale),
        clip_events.clone(),
    )?;
    let models: Vec<Box<dyn crate::smc::Model<u64, RbContext> + Send + Sync>> =
        vec![Box::new(zeroth), Box::new(first)];
    let model_rngs = (0..models.len())
        .map(|index| substream(config.seed, &[tags::RB, trial as u64, tags::MODEL, index as u64]))
        .collect();
    let policy = ResamplePolicy {
        ess_fraction: config.resample_threshold,
        liu_west_a: config.liu_west_a,
    };
    let mut ensemble =
        ModelEnsemble::uniform(models, config.particles_per_model, policy, model_rngs)?;

    let mut lengths = config.sequence_lengths.clone();
    lengths.sort_unstable();
    let mut data_rng = substream(config.seed, &[tags::RB, trial as u64, tags::DATA]);
    let mut frozen: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut records = Vec::with_capacity(config.batches);
    let mut cumulative_shots = 0u64;

    'sweeps: for step in 0..config.batches {
        let started = config.record_timing.then(Instant::now);
        for &length in &lengths {
            let context = RbContext::new(length, config.repetitions_per_length);
            let (p_survive, clipped) = clip_survival(truth.survival(length));
            if clipped {
                clip_events.fetch_add(1, Ordering::Relaxed);
            }
            let survivals =
                simulate_outcome(p_survive, config.repetitions_per_length, &mut data_rng);
            cumulative_shots += config.repetitions_per_length;
            match ensemble.update(&survivals, &context) {
                Ok(()) => {}
                Err(SelectionError::AllModelsZeroEvidence) => {
                    records.push(TrialRecord::failure(
                        trial,
                        step,
                        cumulative_shots,
                        SelectionError::AllModelsZeroEvidence.to_string(),
                    ));
                    break 'sweeps;
                }
                Err(other) => return Err(other.into()),
            }
        }

        let record = build_record(
            trial,
            step,
            cumulative_shots,
            &ensemble,
            &frozen,
            truth.p(),
            clip_events.load(Ordering::Relaxed),
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

pub(super) enum TruthCurve {
    Zeroth(Rb0Params),
    First(Rb1Params),
}

impl TruthCurve {
    pub(super) fn sample(config: &ExperimentConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        match config.rb_true_model {
            RbTrueModel::Zeroth => {
                let draw = rb0_prior(config.prior_scale).sample(rng);
                TruthCurve::Zeroth(Rb0Params::from_slice(&draw))
            }
            RbTrueModel::First => {
                let draw = rb1_prior(config.rb_prior_set, config.prior_scale).sample(rng);
                TruthCurve::First(Rb1Params::from_slice(&draw))
            }
        }
    }

    pub(super) fn survival(&self, length: u32) -> f64 {
        match self {
            TruthCurve::Zeroth(params) => rb0_survival(params, length),
            TruthCurve::First(params) => {
                rb1_survival(params, length).expect("configured lengths are >= 1")
            }
        }
    }

    fn p(&self) -> f64 {
        match self {
            TruthCurve::Zeroth(params) => params.p,
            TruthCurve::First(params) => params.p,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn build_record(
    trial: usize,
    step: usize,
    cumulative_shots: u64,
    ensemble: &ModelEnsemble<u64, RbContext>,
    frozen: &BTreeMap<String, (f64, f64)>,
    p_true: f64,
    clip_count: u64,
    started: Option<Instant>,
) -> Result<TrialRecord, HarnessError> {
    let mut model_posteriors = BTreeMap::new();
    let mut per_model_error = BTreeMap::new();
    let mut evidence_log = BTreeMap::new();
    for entry in ensemble.entries() {
        let name = entry.name().to_string();
        let p_hat = entry.cloud().mean_params()[0];
        per_model_error.insert(name.clone(), (p_hat - p_true).abs());
        model_posteriors.insert(name.clone(), entry.posterior());
        evidence_log.insert(name, entry.cloud().log_evidence());
    }
    for (name, &(error, evidence)) in frozen {
        model_posteriors.insert(name.clone(), 0.0);
        per_model_error.insert(name.clone(), error);
        evidence_log.insert(name.clone(), evidence);
    }

    let mae_p = match ensemble.model_average_estimate()? {
        Estimate::Scalar(p) => p,
        other => unreachable!("decay models extract scalar estimates, got {other:?}"),
    };

    Ok(TrialRecord {
        schema: RECORD_SCHEMA_VERSION,
        trial_id: trial,
        step_index: step,
        status: RecordStatus::Ok,
        model_posteriors,
        per_model_error,
        mae_error: Some((mae_p - p_true).abs()),
        evidence_log,
        cumulative_shots,
        clip_count: Some(clip_count),
        wall_time_ms: started.map(|t| t.elapsed().as_millis() as u64),
        mae_estimate: None,
        error: None,
    })
}
