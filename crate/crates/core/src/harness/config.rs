//! Experiment configuration: per-experiment defaults, TOML file loading,
//! flag overrides and validation. Every field maps one-to-one onto a
//! kebab-case CLI flag and TOML key; values resolve as defaults, then the
//! config file, then flags.

use std::path::{Path, PathBuf};

use clap::builder::PossibleValue;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::rb::{PriorScaleConvention, RbPriorSet};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Tomography,
    Rb,
}

/// Which decay model generates the simulated truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RbTrueModel {
    Zeroth,
    First,
}

impl ValueEnum for RbPriorSet {
    fn value_variants<'a>() -> &'a [Self] {
        &[RbPriorSet::I, RbPriorSet::II]
    }

    fn to_possible_value(&self) -> Option<PossibleValue> {
        Some(match self {
            RbPriorSet::I => PossibleValue::new("I").alias("i"),
            RbPriorSet::II => PossibleValue::new("II").alias("ii"),
        })
    }
}

impl ValueEnum for PriorScaleConvention {
    fn value_variants<'a>() -> &'a [Self] {
        &[PriorScaleConvention::Variance, PriorScaleConvention::Stddev]
    }

    fn to_possible_value(&self) -> Option<PossibleValue> {
        Some(match self {
            PriorScaleConvention::Variance => PossibleValue::new("variance"),
            PriorScaleConvention::Stddev => PossibleValue::new("stddev"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Tomography: number of qubits of the simulated state.
    pub qubits: usize,
    /// Tomography: ranks of the candidate models.
    pub candidate_ranks: Vec<usize>,
    /// Tomography: rank of the simulated true state.
    pub true_rank: usize,
    /// Rb: which decay model the simulated truth is drawn from.
    pub rb_true_model: RbTrueModel,
    /// Rb: prior mean set for the first-order model.
    pub rb_prior_set: RbPriorSet,
    /// Rb: whether the prior scale 0.01 is a variance or a std deviation.
    pub prior_scale: PriorScaleConvention,
    pub particles_per_model: usize,
    /// Tomography: measurement batches per trial. Rb: sweeps over the
    /// sequence-length grid per trial.
    pub batches: usize,
    /// Tomography: shots per batch.
    pub shots_per_batch: u64,
    /// Rb: sequence-length grid, visited in ascending order.
    pub sequence_lengths: Vec<u32>,
    /// Rb: repetitions per sequence length within one sweep.
    pub repetitions_per_length: u64,
    pub trials: usize,
    pub seed: u64,
    /// Resample when ESS falls below this fraction of the particle count;
    /// zero disables resampling.
    pub resample_threshold: f64,
    pub liu_west_a: f64,
    /// Remove models whose posterior falls below this; zero keeps all.
    pub prune_threshold: f64,
    /// Where the JSON-lines records go.
    pub output_path: PathBuf,
    /// Tomography: update on every shot individually instead of whole
    /// batches (same posteriors, many more updates).
    pub per_shot_updates: bool,
    /// Tomography: allow the identity observable among the random settings.
    pub include_identity_pauli: bool,
    /// Emit per-step wall-clock times; off by default because timing breaks
    /// byte-identical reruns.
    pub record_timing: bool,
    /// Embed the model-average state estimate in tomography records.
    pub record_estimates: bool,
}

/// Sequence-length grid 10, 30, ..., 190.
pub fn default_sequence_lengths() -> Vec<u32> {
    (0..10).map(|i| 10 + 20 * i).collect()
}

impl ExperimentConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        let (particles, batches, trials) = match kind {
            ExperimentKind::Tomography => (2000, 50, 10),
            ExperimentKind::Rb => (1000, 10, 20),
        };
        Self {
            experiment: kind,
            qubits: 2,
            candidate_ranks: vec![1, 2, 3, 4],
            true_rank: 1,
            rb_true_model: RbTrueModel::Zeroth,
            rb_prior_set: RbPriorSet::I,
            prior_scale: PriorScaleConvention::Variance,
            particles_per_model: particles,
            batches,
            shots_per_batch: 100,
            sequence_lengths: default_sequence_lengths(),
            repetitions_per_length: 1000,
            trials,
            seed: 42,
            resample_threshold: 0.5,
            liu_west_a: 0.98,
            prune_threshold: 0.0,
            output_path: PathBuf::from("records.jsonl"),
            per_shot_updates: false,
            include_identity_pauli: false,
            record_timing: false,
            record_estimates: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if self.particles_per_model == 0 {
            return fail("particles-per-model must be at least 1".into());
        }
        if self.batches == 0 {
            return fail("batches must be at least 1".into());
        }
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return fail(format!(
                "resample-threshold {} must lie in [0, 1]",
                self.resample_threshold
            ));
        }
        if !(self.liu_west_a > 0.0 && self.liu_west_a <= 1.0) {
            return fail(format!("liu-west-a {} must lie in (0, 1]", self.liu_west_a));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return fail(format!("prune-threshold {} must lie in [0, 1)", self.prune_threshold));
        }
        match self.experiment {
            ExperimentKind::Tomography => {
                if self.qubits == 0 {
                    return fail("qubits must be at least 1".into());
                }
                if self.shots_per_batch == 0 {
                    return fail("shots-per-batch must be at least 1".into());
                }
                if self.candidate_ranks.is_empty() {
                    return fail("candidate-ranks must not be empty".into());
                }
                let max = 1usize << self.qubits;
                for &r in &self.candidate_ranks {
                    if r == 0 || r > max {
                        return fail(format!(
                            "candidate rank {r} out of range 1..={max} for {} qubit(s)",
                            self.qubits
                        ));
                    }
                }
                let mut sorted = self.candidate_ranks.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != self.candidate_ranks.len() {
                    return fail("candidate-ranks must be distinct".into());
                }
                if !self.candidate_ranks.contains(&self.true_rank) {
                    return fail(format!(
                        "true-rank {} is not among the candidate ranks {:?}",
                        self.true_rank, self.candidate_ranks
                    ));
                }
            }
            ExperimentKind::Rb => {
                if self.sequence_lengths.is_empty() {
                    return fail("sequence-lengths must not be empty".into());
                }
                if self.sequence_lengths.iter().any(|&m| m == 0) {
                    return fail("sequence lengths must be at least 1".into());
                }
                if self.repetitions_per_length == 0 {
                    return fail("repetitions-per-length must be at least 1".into());
                }
                if self.per_shot_updates {
                    return fail("per-shot-updates applies only to tomography".into());
                }
            }
        }
        Ok(())
    }
}

/// Partial configuration: any subset of the fields, used both for TOML files
/// and for CLI flag overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct ConfigPatch {
    pub experiment: Option<ExperimentKind>,
    pub qubits: Option<usize>,
    pub candidate_ranks: Option<Vec<usize>>,
    pub true_rank: Option<usize>,
    pub rb_true_model: Option<RbTrueModel>,
    pub rb_prior_set: Option<RbPriorSet>,
    pub prior_scale: Option<PriorScaleConvention>,
    pub particles_per_model: Option<usize>,
    pub batches: Option<usize>,
    pub shots_per_batch: Option<u64>,
    pub sequence_lengths: Option<Vec<u32>>,
    pub repetitions_per_length: Option<u64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub resample_threshold: Option<f64>,
    pub liu_west_a: Option<f64>,
    pub prune_threshold: Option<f64>,
    pub output_path: Option<PathBuf>,
    pub per_shot_updates: Option<bool>,
    pub include_identity_pauli: Option<bool>,
    pub record_timing: Option<bool>,
    pub record_estimates: Option<bool>,
}

impl ConfigPatch {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn apply_to(&self, config: &mut ExperimentConfig) {
        macro_rules! set {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field {
                    config.$field = v.clone();
                })*
            };
        }
        set!(
            experiment,
            qubits,
            candidate_ranks,
            true_rank,
            rb_true_model,
            rb_prior_set,
            prior_scale,
            particles_per_model,
            batches,
            shots_per_batch,
            sequence_lengths,
            repetitions_per_length,
            trials,
            seed,
            resample_threshold,
            liu_west_a,
            prune_threshold,
            output_path,
            per_shot_updates,
            include_identity_pauli,
            record_timing,
            record_estimates,
        );
    }
}

/// Defaults for `kind`, overridden by the optional config file, overridden by
/// `flags`; the experiment kind itself always follows `kind`.
pub fn resolve_config(
    kind: ExperimentKind,
    file: Option<&Path>,
    flags: &ConfigPatch,
) -> Result<ExperimentConfig, HarnessError> {
    let mut config = ExperimentConfig::default_for(kind);
    if let Some(path) = file {
        ConfigPatch::from_toml_file(path)?.apply_to(&mut config);
    }
    flags.apply_to(&mut config);
    config.experiment = kind;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_differ_by_experiment() {
        let tomo = ExperimentConfig::default_for(ExperimentKind::Tomography);
        assert_eq!(tomo.particles_per_model, 2000);
        assert_eq!(tomo.batches, 50);
        assert_eq!(tomo.trials, 10);
        tomo.validate().unwrap();

        let rb = ExperimentConfig::default_for(ExperimentKind::Rb);
        assert_eq!(rb.particles_per_model, 1000);
        assert_eq!(rb.trials, 20);
        assert_eq!(rb.sequence_lengths, vec![10, 30, 50, 70, 90, 110, 130, 150, 170, 190]);
        rb.validate().unwrap();
    }

    #[test]
    fn toml_overrides_defaults_and_flags_override_toml() {
        let file = ConfigPatch::from_toml_str(
            "particles-per-model = 500\nseed = 7\ntrue-rank = 2\nprior-scale = \"stddev\"\n",
        )
        .unwrap();
        let mut config = ExperimentConfig::default_for(ExperimentKind::Tomography);
        file.apply_to(&mut config);
        assert_eq!(config.particles_per_model, 500);
        assert_eq!(config.seed, 7);
        assert_eq!(config.true_rank, 2);
        assert_eq!(config.prior_scale, PriorScaleConvention::Stddev);

        let flags = ConfigPatch { seed: Some(11), ..Default::default() };
        flags.apply_to(&mut config);
        assert_eq!(config.seed, 11);
        assert_eq!(config.particles_per_model, 500);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigPatch::from_toml_str("particle-count = 10\n").is_err());
    }

    #[test]
    fn rb_prior_set_spelling() {
        let patch = ConfigPatch::from_toml_str("rb-prior-set = \"II\"\n").unwrap();
        assert_eq!(patch.rb_prior_set, Some(RbPriorSet::II));
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut config = ExperimentConfig::default_for(ExperimentKind::Tomography);
        config.true_rank = 5;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default_for(ExperimentKind::Tomography);
        config.candidate_ranks = vec![1, 1, 2];
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default_for(ExperimentKind::Tomography);
        config.candidate_ranks = vec![1, 8];
        assert!(config.validate().is_err(), "rank 8 needs 3 qubits");
        config.qubits = 3;
        assert!(config.validate().is_ok());

        let mut config = ExperimentConfig::default_for(ExperimentKind::Rb);
        config.sequence_lengths = vec![];
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default_for(ExperimentKind::Rb);
        config.per_shot_updates = true;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default_for(ExperimentKind::Tomography);
        config.liu_west_a = 0.0;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default_for(ExperimentKind::Tomography);
        config.prune_threshold = 1.0;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default_for(ExperimentKind::Tomography);
        config.trials = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn resolve_forces_subcommand_kind() {
        let flags = ConfigPatch { experiment: Some(ExperimentKind::Rb), ..Default::default() };
        let config = resolve_config(ExperimentKind::Rb, None, &flags).unwrap();
        assert_eq!(config.experiment, ExperimentKind::Rb);
        assert_eq!(config.particles_per_model, 1000);
    }
}
