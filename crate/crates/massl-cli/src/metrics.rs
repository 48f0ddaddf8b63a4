//! Metrics persistence: one JSON record per logging interval (JSONL) plus a
//! wide summary CSV for evaluations.
//!
//! Wall-clock time is tracked in the record but excluded from serialization
//! so that same-seed runs produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau_t: f64,
    pub ema_momentum: f64,
    pub feature_std: f64,
    pub target_entropy: f64,
    pub entropy_ratio: f64,
    pub effective_rank: f64,
    pub collapsed: bool,
    #[serde(skip_serializing, default)]
    pub wall_ms: f64,
}

impl MetricsRecord {
    /// Numeric fields in serialization order, for tolerance-based diffs.
    pub fn numeric_fields(&self) -> [f64; 11] {
        [
            self.step as f64,
            self.epoch as f64,
            self.loss,
            self.lr,
            self.weight_decay,
            self.tau_t,
            self.ema_momentum,
            self.feature_std,
            self.target_entropy,
            self.entropy_ratio,
            self.effective_rank,
        ]
    }
}

/// Append-only JSONL writer.
pub struct JsonlWriter {
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(JsonlWriter {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<(), CliError> {
        serde_json::to_writer(&mut self.out, record)
            .map_err(|e| CliError::Runtime(format!("metrics serialization: {e}")))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>, CliError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| CliError::Runtime(format!("bad metrics line: {e}")))
        })
        .collect()
}

/// A wide one-row table: named columns, one value each.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub columns: Vec<(String, f64)>,
}

impl SummaryTable {
    pub fn new() -> Self {
        SummaryTable {
            columns: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.columns.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let header: Vec<&str> = self.columns.iter().map(|(n, _)| n.as_str()).collect();
        let values: Vec<String> = self.columns.iter().map(|(_, v)| format!("{v}")).collect();
        format!("{}\n{}\n", header.join(","), values.join(","))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CliError::Runtime("empty summary csv".into()))?;
        let values = lines
            .next()
            .ok_or_else(|| CliError::Runtime("summary csv missing value row".into()))?;
        let names: Vec<&str> = header.split(',').collect();
        let vals: Vec<&str> = values.split(',').collect();
        if names.len() != vals.len() {
            return Err(CliError::Runtime("summary csv column mismatch".into()));
        }
        let mut t = SummaryTable::new();
        for (n, v) in names.iter().zip(vals) {
            t.push(
                n.to_string(),
                v.parse()
                    .map_err(|e| CliError::Runtime(format!("summary csv value: {e}")))?,
            );
        }
        Ok(t)
    }
}

impl Default for SummaryTable {
    fn default() -> Self {
        Self::new()
    }
}
