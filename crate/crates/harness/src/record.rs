//! Results records and their JSON / CSV forms.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use glap_core::io::write_atomic;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and unbiased standard deviation; `std` is 0 for a single value.
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Summary { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Unix seconds.
    pub started_at: u64,
    pub finished_at: u64,
}

/// Per-seed metric values and their aggregate, plus optional extra tables
/// (rank study rows, sweep points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub kind: String,
    pub metrics: BTreeMap<String, Summary>,
    pub per_seed: Vec<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<BTreeMap<String, f64>>,
    pub provenance: Provenance,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl ResultsRecord {
    pub fn new(kind: &str, config_hash: String, seeds: Vec<u64>, per_seed: Vec<BTreeMap<String, f64>>) -> Self {
        let mut metrics = BTreeMap::new();
        if let Some(first) = per_seed.first() {
            for key in first.keys() {
                let values: Vec<f64> = per_seed.iter().map(|m| m[key]).collect();
                metrics.insert(key.clone(), Summary::of(&values));
            }
        }
        let now = unix_now();
        ResultsRecord {
            kind: kind.to_string(),
            metrics,
            per_seed,
            rows: Vec::new(),
            provenance: Provenance {
                config_hash,
                seeds,
                started_at: now,
                finished_at: now,
            },
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits17::default());
        self.serialize(&mut ser).expect("record serializes");
        buf.push(b'\n');
        buf
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// One row per seed followed by `mean` and `std` rows.
    pub fn metrics_csv(&self) -> String {
        let keys: Vec<&String> = self.metrics.keys().collect();
        let mut out = String::from("seed");
        for k in &keys {
            out.push(',');
            out.push_str(k);
        }
        out.push('\n');
        for (seed, row) in self.provenance.seeds.iter().zip(&self.per_seed) {
            out.push_str(&seed.to_string());
            for k in &keys {
                out.push(',');
                out.push_str(&fmt17(row[*k]));
            }
            out.push('\n');
        }
        for (label, pick) in [("mean", 0), ("std", 1)] {
            out.push_str(label);
            for k in &keys {
                let s = self.metrics[*k];
                out.push(',');
                out.push_str(&fmt17(if pick == 0 { s.mean } else { s.std }));
            }
            out.push('\n');
        }
        out
    }

    pub fn rows_csv(&self) -> String {
        let Some(first) = self.rows.first() else {
            return String::new();
        };
        let keys: Vec<&String> = first.keys().collect();
        let mut out = keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = keys.iter().map(|k| fmt17(row[*k])).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes `results.json` and `metrics.csv` (plus `rows.csv` when present)
    /// into `dir`, each atomically.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(&dir.join(format!("{stem}.json")), &self.to_json())?;
        write_atomic(&dir.join(format!("{stem}_metrics.csv")), self.metrics_csv().as_bytes())?;
        if !self.rows.is_empty() {
            write_atomic(&dir.join(format!("{stem}_rows.csv")), self.rows_csv().as_bytes())?;
        }
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// JSON formatter that prints every float with 17 significant digits.
#[derive(Default)]
struct SigDigits17(serde_json::ser::CompactFormatter);

impl serde_json::ser::Formatter for SigDigits17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> ResultsRecord {
        let per_seed = vec![
            BTreeMap::from([("a".to_string(), 0.1), ("b".to_string(), 1.0 / 3.0)]),
            BTreeMap::from([("a".to_string(), 0.3), ("b".to_string(), 2.0)]),
        ];
        ResultsRecord::new("test", "abc".into(), vec![4, 5], per_seed)
    }

    #[test]
    fn floats_round_trip_bitwise() {
        let r = record();
        let back = ResultsRecord::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let text = String::from_utf8(r.to_json()).unwrap();
        assert!(text.contains("3.3333333333333331e-1"), "{text}");
    }

    #[test]
    fn summary_uses_unbiased_std() {
        let r = record();
        assert!((r.metrics["a"].mean - 0.2).abs() < 1e-15);
        assert!((r.metrics["a"].std - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of(&[3.0]).std, 0.0);
    }

    #[test]
    fn csv_has_seed_and_aggregate_rows() {
        let csv = record().metrics_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "seed,a,b");
        assert!(lines[1].starts_with("4,1.0000000000000001e-1,"));
        assert!(lines[3].starts_with("mean,"));
        assert!(lines[4].starts_with("std,"));
    }
}
