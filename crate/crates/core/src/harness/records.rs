//! Per-step trial records and their JSON-lines encoding.
//!
//! One record is emitted per (trial, step). Map keys are model names held in
//! ordered maps so serialization is byte-stable; optional fields are omitted
//! entirely when absent. Records of a failed trial carry `status: "failed"`
//! and an error string instead of estimates.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tomography::DensityMatrix;

use super::HarnessError;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema: u32,
    pub trial_id: usize,
    pub step_index: usize,
    pub status: RecordStatus,
    /// Posterior model probabilities; pruned and dead models report 0.
    pub model_posteriors: BTreeMap<String, f64>,
    /// Estimate error per model (spectral distance for states, |p - p_true|
    /// for decay rates); frozen at removal time for pruned models.
    pub per_model_error: BTreeMap<String, f64>,
    /// Error of the model-average estimate; absent on failure records.
    pub mae_error: Option<f64>,
    /// Accumulated log-evidence per model.
    pub evidence_log: BTreeMap<String, f64>,
    pub cumulative_shots: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clip_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mae_estimate: Option<DensityMatrix>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn failure(trial_id: usize, step_index: usize, cumulative_shots: u64, error: String) -> Self {
        Self {
            schema: RECORD_SCHEMA_VERSION,
            trial_id,
            step_index,
            status: RecordStatus::Failed,
            model_posteriors: BTreeMap::new(),
            per_model_error: BTreeMap::new(),
            mae_error: None,
            evidence_log: BTreeMap::new(),
            cumulative_shots,
            clip_count: None,
            wall_time_ms: None,
            mae_estimate: None,
            error: Some(error),
        }
    }
}

/// Serialize records one JSON object per line, in slice order.
pub fn write_jsonl(path: &Path, records: &[TrialRecord]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> TrialRecord {
        let mut posteriors = BTreeMap::new();
        posteriors.insert("rank-1".to_string(), 0.9);
        posteriors.insert("rank-2".to_string(), 0.1);
        let mut errors = BTreeMap::new();
        errors.insert("rank-1".to_string(), 0.02);
        errors.insert("rank-2".to_string(), 0.05);
        let mut evidence = BTreeMap::new();
        evidence.insert("rank-1".to_string(), -120.5);
        evidence.insert("rank-2".to_string(), -122.7);
        TrialRecord {
            schema: RECORD_SCHEMA_VERSION,
            trial_id: 3,
            step_index: 7,
            status: RecordStatus::Ok,
            model_posteriors: posteriors,
            per_model_error: errors,
            mae_error: Some(0.021),
            evidence_log: evidence,
            cumulative_shots: 800,
            clip_count: None,
            wall_time_ms: None,
            mae_estimate: None,
            error: None,
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let records = vec![sample_record(), TrialRecord::failure(4, 0, 0, "boom".into())];
        write_jsonl(&path, &records).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back, records);
        assert_eq!(back[1].status, RecordStatus::Failed);
        assert_eq!(back[1].error.as_deref(), Some("boom"));
    }

    #[test]
    fn optional_fields_are_omitted() {
        let json = serde_json::to_string(&sample_record()).unwrap();
        assert!(json.contains("\"schema\":1"));
        assert!(!json.contains("clip_count"));
        assert!(!json.contains("wall_time_ms"));
        assert!(!json.contains("mae_estimate"));
        assert!(!json.contains("\"error\""));

        let mut with_clip = sample_record();
        with_clip.clip_count = Some(12);
        let json = serde_json::to_string(&with_clip).unwrap();
        assert!(json.contains("\"clip_count\":12"));
    }

    #[test]
    fn map_keys_are_sorted_in_output() {
        let mut record = sample_record();
        record.model_posteriors.insert("rank-0".to_string(), 0.0);
        let json = serde_json::to_string(&record).unwrap();
        let a = json.find("rank-0").unwrap();
        let b = json.find("rank-1").unwrap();
        assert!(a < b);
    }
}
