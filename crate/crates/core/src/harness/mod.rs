//! Experiment harness: configuration, drivers for both studies, records,
//! summaries and criteria reports.
//!
//! Trials run in parallel but all randomness is drawn from per-(trial, role)
//! substreams of the root seed and records are assembled in (trial, step)
//! order, so output files are byte-identical for any worker count.

use rand::prelude::*;
use rand_distr::Binomial;
use thiserror::Error;

use crate::rb::RbError;
use crate::selection::SelectionError;
use crate::smc::SmcError;
use crate::tomography::TomographyError;

pub mod config;
pub mod criteria;
pub mod records;
pub mod summary;

mod rb_experiment;
mod tomography_experiment;

pub use config::{resolve_config, ConfigPatch, ExperimentConfig, ExperimentKind, RbTrueModel};
pub use records::{read_jsonl, write_jsonl, RecordStatus, TrialRecord, RECORD_SCHEMA_VERSION};
pub use summary::{quantile, summarize, write_summary_csv, Statistic, SummaryRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("records: {0}")]
    InvalidRecords(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Tomography(#[from] TomographyError),
    #[error(transparent)]
    Rb(#[from] RbError),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for runtime
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::InvalidConfig(_) | HarnessError::Toml(_) => 2,
            _ => 3,
        }
    }
}

/// Substream tags for the experiment drivers.
mod tags {
    pub const TOMOGRAPHY: u64 = 1;
    pub const RB: u64 = 2;
    pub const CRITERIA: u64 = 3;

    pub const TRUTH: u64 = 0;
    pub const DATA: u64 = 1;
    pub const MODEL: u64 = 2;
}

/// Draw the number of successes among `shots` Bernoulli trials.
pub fn simulate_outcome(probability: f64, shots: u64, rng: &mut dyn RngCore) -> u64 {
    assert!(shots >= 1, "at least one shot per batch");
    debug_assert!((-1e-12..=1.0 + 1e-12).contains(&probability));
    let p = probability.clamp(0.0, 1.0);
    Binomial::new(shots, p).expect("clamped probability").sample(rng)
}

/// Run the configured experiment; records come back in (trial, step) order.
/// Individual trials may fail (recorded as failure rows); the run as a whole
/// fails only when no trial succeeds.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialRecord>, HarnessError> {
    config.validate()?;
    let per_trial = match config.experiment {
        ExperimentKind::Tomography => tomography_experiment::run(config)?,
        ExperimentKind::Rb => rb_experiment::run(config)?,
    };
    let any_ok = per_trial
        .iter()
        .flatten()
        .any(|record| record.status == RecordStatus::Ok);
    if !any_ok {
        let detail = per_trial
            .iter()
            .flatten()
            .find_map(|record| record.error.clone())
            .unwrap_or_else(|| "no successful trials".to_string());
        return Err(HarnessError::Simulation(format!("every trial failed: {detail}")));
    }
    Ok(per_trial.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn binomial_edges_are_deterministic() {
        let mut rng = substream(1, &[0]);
        assert_eq!(simulate_outcome(1.0, 100, &mut rng), 100);
        assert_eq!(simulate_outcome(0.0, 100, &mut rng), 0);
    }

    #[test]
    fn binomial_mean_is_right() {
        let mut rng = substream(2, &[0]);
        let n = 10_000u64;
        let total: u64 = (0..n).map(|_| simulate_outcome(0.3, 100, &mut rng)).sum();
        let mean = total as f64 / n as f64;
        // sd of the mean is sqrt(100 * 0.3 * 0.7 / n) ~ 0.046
        assert!((mean - 30.0).abs() < 3.0 * 0.046, "mean {mean}");
    }

    #[test]
    fn same_seed_same_draws() {
        let draws = |seed: u64| -> Vec<u64> {
            let mut rng = substream(seed, &[9]);
            (0..20).map(|_| simulate_outcome(0.42, 50, &mut rng)).collect()
        };
        assert_eq!(draws(5), draws(5));
        assert_ne!(draws(5), draws(6));
    }
}
