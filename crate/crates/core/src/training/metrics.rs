//! Line-delimited training metrics and their CSV export.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_SCHEMA: u32 = 1;

/// One flushed metrics record: means over the updates since the previous
/// flush. `update` is the last update the record covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetrics {
    pub schema: u32,
    pub update: u64,
    /// Fraction of batch examples misclassified by one prior rollout.
    pub train_error: f64,
    pub f_hat: f64,
    pub lm_hat: f64,
    pub ess: f64,
    /// Gradient-variance probe of the training estimator; `None` when the
    /// probe is disabled.
    pub grad_variance: Option<f64>,
    /// Mean entropy (nats) of the prediction network's scale head.
    pub scale_entropy: f64,
    /// Seconds since the training process started. The only field that is
    /// not reproducible.
    pub wall_clock_secs: f64,
}

impl TrainingMetrics {
    /// The record with the wall clock zeroed, for reproducibility checks.
    pub fn without_wall_clock(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Appends records to a metrics file.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            file: File::create(path)?,
        })
    }

    /// Opens for appending after dropping every record past `update`.
    pub fn resume(path: &Path, update: u64) -> Result<Self> {
        let kept: Vec<TrainingMetrics> = if path.exists() {
            read_metrics(path)?.into_iter().filter(|m| m.update <= update).collect()
        } else {
            Vec::new()
        };
        let mut w = Self::create(path)?;
        for m in &kept {
            w.write(m)?;
        }
        Ok(w)
    }

    pub fn write(&mut self, record: &TrainingMetrics) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<TrainingMetrics>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::input_format(path, format!("line {}: {m}", i + 1));
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        match value.get("schema").and_then(serde_json::Value::as_u64) {
            Some(s) if s == u64::from(METRICS_SCHEMA) => {}
            other => return Err(bad(format!("unsupported metrics schema {other:?}"))),
        }
        out.push(serde_json::from_value(value).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

/// `metrics-<run-id>.jsonl` → `<run-id>`; other names use the file stem.
pub fn run_id_from_path(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    match name.strip_prefix("metrics-").and_then(|n| n.strip_suffix(".jsonl")) {
        Some(id) => id.to_string(),
        None => path
            .file_stem()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string(),
    }
}

pub const CSV_HEADER: [&str; 7] = [
    "run-id",
    "update",
    "train-error",
    "F-hat",
    "L_M-hat",
    "ESS",
    "grad-variance",
];

fn fmt(x: f64) -> String {
    // 17 significant digits: parses back to the identical f64.
    format!("{x:.16e}")
}

/// Merges metrics files into one CSV, one row per record, in input order.
/// Every file is parsed before anything is written.
pub fn export_curves<W: Write>(inputs: &[&Path], out: W) -> Result<()> {
    let runs = inputs
        .iter()
        .map(|p| Ok((run_id_from_path(p), read_metrics(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Internal(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for (id, records) in &runs {
        for m in records {
            w.write_record([
                id.clone(),
                m.update.to_string(),
                fmt(m.train_error),
                fmt(m.f_hat),
                fmt(m.lm_hat),
                fmt(m.ess),
                m.grad_variance.map(fmt).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(update: u64, x: f64) -> TrainingMetrics {
        TrainingMetrics {
            schema: METRICS_SCHEMA,
            update,
            train_error: x,
            f_hat: -x * 3.0,
            lm_hat: -x,
            ess: 1.0 + x,
            grad_variance: (update % 2 == 0).then_some(x / 7.0),
            scale_entropy: 0.5,
            wall_clock_secs: 1.25,
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("metrics-a.jsonl");
        let b = dir.path().join("metrics-b.jsonl");
        let mut w = MetricsWriter::create(&a).unwrap();
        let recs: Vec<_> = (0..4).map(|u| record(u, 0.1 + u as f64 / 3.0)).collect();
        recs.iter().for_each(|r| w.write(r).unwrap());
        MetricsWriter::create(&b)
            .unwrap()
            .write(&record(9, std::f64::consts::PI))
            .unwrap();

        let mut out = Vec::new();
        export_curves(&[&a, &b], &mut out).unwrap();
        let mut rd = csv::Reader::from_reader(&out[..]);
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 5);
        for (row, rec) in rows.iter().zip(&recs) {
            assert_eq!(&row[0], "a");
            assert_eq!(row[2].parse::<f64>().unwrap(), rec.train_error);
            assert_eq!(row[3].parse::<f64>().unwrap(), rec.f_hat);
            assert_eq!(row[6].parse::<f64>().ok(), rec.grad_variance);
        }
        assert_eq!(&rows[4][0], "b");
    }

    #[test]
    fn empty_file_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("metrics-x.jsonl");
        File::create(&a).unwrap();
        let mut out = Vec::new();
        export_curves(&[&a], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn foreign_schema_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("metrics-a.jsonl");
        let mut w = MetricsWriter::create(&a).unwrap();
        w.write(&record(1, 0.2)).unwrap();
        let mut r = record(2, 0.2);
        r.schema = 2;
        w.write(&r).unwrap();
        assert!(matches!(read_metrics(&a), Err(Error::InputFormat { .. })));
        assert!(matches!(
            export_curves(&[&a], Vec::new()),
            Err(Error::InputFormat { .. })
        ));
    }

    #[test]
    fn resume_truncates_later_records() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("metrics-a.jsonl");
        let mut w = MetricsWriter::create(&a).unwrap();
        (0..5).for_each(|u| w.write(&record(u * 10, 0.3)).unwrap());
        drop(w);
        let mut w = MetricsWriter::resume(&a, 20).unwrap();
        w.write(&record(30, 0.9)).unwrap();
        let back = read_metrics(&a).unwrap();
        assert_eq!(back.iter().map(|m| m.update).collect::<Vec<_>>(), vec![0, 10, 20, 30]);
        assert_eq!(back[3].train_error, 0.9);
    }
}
