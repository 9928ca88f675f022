//! Aggregation of trial records into per-step quartile series and CSV output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::records::{RecordStatus, TrialRecord};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Q1,
    Median,
    Q3,
}

impl Statistic {
    const ALL: [Statistic; 3] = [Statistic::Q1, Statistic::Median, Statistic::Q3];

    fn fraction(self) -> f64 {
        match self {
            Statistic::Q1 => 0.25,
            Statistic::Median => 0.5,
            Statistic::Q3 => 0.75,
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Q1 => "q1",
            Statistic::Median => "median",
            Statistic::Q3 => "q3",
        })
    }
}

/// One aggregated row: a statistic of every series at one step, across trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub step_index: usize,
    pub statistic: Statistic,
    pub values: BTreeMap<String, f64>,
}

/// Quantile with linear interpolation between order statistics: the value at
/// fractional position (n - 1) * q of the sorted sample.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&q));
    let position = (sorted.len() - 1) as f64 * q;
    let low = position.floor() as usize;
    let high = position.ceil() as usize;
    if low == high {
        sorted[low]
    } else {
        let frac = position - low as f64;
        sorted[low] + frac * (sorted[high] - sorted[low])
    }
}

/// Collapse records across trials into q1/median/q3 rows per step. Series are
/// `posterior.<model>` and `error.<model>` for every model plus `error.mae`.
/// Failed records are skipped; every successful record must carry the same
/// model set.
pub fn summarize(records: &[TrialRecord]) -> Result<Vec<SummaryRow>, HarnessError> {
    let ok: Vec<&TrialRecord> = records.iter().filter(|r| r.status == RecordStatus::Ok).collect();
    if ok.is_empty() {
        return Err(HarnessError::InvalidRecords("no successful records to summarize".into()));
    }

    let series_of = |record: &TrialRecord| -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        for (name, value) in &record.model_posteriors {
            map.insert(format!("posterior.{name}"), *value);
        }
        for (name, value) in &record.per_model_error {
            map.insert(format!("error.{name}"), *value);
        }
        if let Some(mae) = record.mae_error {
            map.insert("error.mae".to_string(), mae);
        }
        map
    };

    let expected: BTreeSet<String> = series_of(ok[0]).into_keys().collect();
    let mut grouped: BTreeMap<usize, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for record in &ok {
        let series = series_of(record);
        let keys: BTreeSet<String> = series.keys().cloned().collect();
        if keys != expected {
            return Err(HarnessError::InvalidRecords(format!(
                "record (trial {}, step {}) has series {:?}, expected {:?}",
                record.trial_id, record.step_index, keys, expected
            )));
        }
        let slot = grouped.entry(record.step_index).or_default();
        for (key, value) in series {
            slot.entry(key).or_default().push(value);
        }
    }

    let mut rows = Vec::new();
    for (step_index, mut series) in grouped {
        for values in series.values_mut() {
            values.sort_by(|a, b| a.total_cmp(b));
        }
        for statistic in Statistic::ALL {
            let values = series
                .iter()
                .map(|(key, sorted)| (key.clone(), quantile(sorted, statistic.fraction())))
                .collect();
            rows.push(SummaryRow { step_index, statistic, values });
        }
    }
    Ok(rows)
}

/// Write rows as CSV: `step_index,statistic,<series...>` with series columns
/// in sorted name order.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<(), HarnessError> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    let columns: Vec<String> = match rows.first() {
        Some(row) => row.values.keys().cloned().collect(),
        None => Vec::new(),
    };
    let mut header = vec!["step_index".to_string(), "statistic".to_string()];
    header.extend(columns.iter().cloned());
    csv_writer.write_record(&header)?;
    for row in rows {
        let mut fields = vec![row.step_index.to_string(), row.statistic.to_string()];
        for column in &columns {
            let value = row.values.get(column).ok_or_else(|| {
                HarnessError::InvalidRecords(format!(
                    "summary row (step {}) is missing series {column}",
                    row.step_index
                ))
            })?;
            fields.push(value.to_string());
        }
        csv_writer.write_record(&fields)?;
    }
    csv_writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::records::RECORD_SCHEMA_VERSION;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_examples() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&values, 0.5), 3.0);
        assert_eq!(quantile(&values, 0.25), 2.0);
        assert_eq!(quantile(&values, 0.75), 4.0);
        assert_eq!(quantile(&values, 0.0), 1.0);
        assert_eq!(quantile(&values, 1.0), 5.0);

        let pair = [1.0, 2.0];
        assert_eq!(quantile(&pair, 0.5), 1.5);
        assert_eq!(quantile(&pair, 0.25), 1.25);

        let single = [9.0];
        assert_eq!(quantile(&single, 0.25), 9.0);
        assert_eq!(quantile(&single, 0.5), 9.0);
        assert_eq!(quantile(&single, 0.75), 9.0);
    }

    fn record(trial: usize, step: usize, posterior: f64, error: f64) -> TrialRecord {
        let mut model_posteriors = BTreeMap::new();
        model_posteriors.insert("m".to_string(), posterior);
        let mut per_model_error = BTreeMap::new();
        per_model_error.insert("m".to_string(), error);
        let mut evidence_log = BTreeMap::new();
        evidence_log.insert("m".to_string(), -1.0);
        TrialRecord {
            schema: RECORD_SCHEMA_VERSION,
            trial_id: trial,
            step_index: step,
            status: RecordStatus::Ok,
            model_posteriors,
            per_model_error,
            mae_error: Some(error),
            evidence_log,
            cumulative_shots: 100,
            clip_count: None,
            wall_time_ms: None,
            mae_estimate: None,
            error: None,
        }
    }

    #[test]
    fn summarize_computes_quartiles_per_step() {
        let records: Vec<TrialRecord> = (0..5)
            .map(|t| record(t, 0, (t + 1) as f64 / 10.0, (t + 1) as f64))
            .collect();
        let rows = summarize(&records).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].statistic, Statistic::Q1);
        assert_eq!(rows[1].statistic, Statistic::Median);
        assert_eq!(rows[2].statistic, Statistic::Q3);
        assert_relative_eq!(rows[1].values["posterior.m"], 0.3, max_relative = 1e-12);
        assert_relative_eq!(rows[0].values["error.m"], 2.0, max_relative = 1e-12);
        assert_relative_eq!(rows[2].values["error.mae"], 4.0, max_relative = 1e-12);
        // q1 <= median <= q3 on every series
        for key in rows[0].values.keys() {
            assert!(rows[0].values[key] <= rows[1].values[key]);
            assert!(rows[1].values[key] <= rows[2].values[key]);
        }
    }

    #[test]
    fn summarize_is_permutation_invariant() {
        let mut records: Vec<TrialRecord> = (0..7)
            .flat_map(|t| (0..3).map(move |s| record(t, s, (t as f64) / 7.0, t as f64 + s as f64)))
            .collect();
        let forward = summarize(&records).unwrap();
        records.reverse();
        let reversed = summarize(&records).unwrap();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn summarize_skips_failures_and_rejects_mismatched_series() {
        let mut records = vec![record(0, 0, 0.5, 1.0), TrialRecord::failure(1, 0, 0, "x".into())];
        let rows = summarize(&records).unwrap();
        assert_eq!(rows[1].values["posterior.m"], 0.5);

        assert!(summarize(&[records.remove(1)]).is_err());

        let mut other = record(2, 0, 0.5, 1.0);
        other.model_posteriors.insert("extra".into(), 0.0);
        assert!(summarize(&[record(0, 0, 0.5, 1.0), other]).is_err());
    }

    #[test]
    fn csv_layout() {
        let records = vec![record(0, 0, 0.5, 1.0), record(1, 0, 0.7, 2.0)];
        let rows = summarize(&records).unwrap();
        let mut buffer = Vec::new();
        write_summary_csv(&rows, &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step_index,statistic,error.m,error.mae,posterior.m");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,q1,"));
        assert_eq!(text.lines().count(), 4);
    }
}
