use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Mean, sample standard deviation and count of a per-token metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            count: values.len(),
        })
    }
}

/// An evaluation report: per-row entries, aggregates recomputable from
/// them, and enough provenance to reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<R> {
    pub kind: String,
    pub version: String,
    pub seed: u64,
    pub config_digest: String,
    pub aggregates: BTreeMap<String, Aggregate>,
    /// Scalar summaries that are not per-row means.
    pub summary: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub rows: Vec<R>,
}

impl<R: Serialize> Report<R> {
    pub fn new(kind: &str, seed: u64, config: &impl Serialize, rows: Vec<R>) -> Result<Self> {
        Ok(Self {
            kind: kind.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_digest: config_digest(config)?,
            aggregates: BTreeMap::new(),
            summary: BTreeMap::new(),
            notes: Vec::new(),
            rows,
        })
    }

    /// Adds an aggregate over `metric(row)` for every row where it is present.
    pub fn aggregate(&mut self, name: &str, metric: impl Fn(&R) -> Option<f64>) {
        let values: Vec<f64> = self.rows.iter().filter_map(metric).collect();
        if let Some(a) = Aggregate::of(&values) {
            self.aggregates.insert(name.into(), a);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// One line per row, columns in sorted key order. Nested values are
    /// written as JSON.
    pub fn write_tsv<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| match serde_json::to_value(r)? {
                serde_json::Value::Object(m) => Ok(m),
                _ => Err(Error::Format("report rows must be objects".into())),
            })
            .collect::<Result<_>>()?;
        let mut out = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
        let Some(first) = rows.first() else {
            out.flush()?;
            return Ok(());
        };
        let header: Vec<&String> = first.keys().collect();
        out.write_record(&header)?;
        for r in &rows {
            out.write_record(header.iter().map(|k| match r.get(*k) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(serde_json::Value::Null) | None => String::new(),
                Some(v) => v.to_string(),
            }))?;
        }
        out.flush()?;
        Ok(())
    }
}

impl<R: for<'de> Deserialize<'de>> Report<R> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `config`.
pub fn config_digest(config: &impl Serialize) -> Result<String> {
    let value = serde_json::to_value(config)?;
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&value)?)))
}
