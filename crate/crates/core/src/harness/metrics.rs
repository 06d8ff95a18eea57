//! Per-iteration metrics CSV. One row per iteration, header first, flushed
//! after every row.

use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Bumped whenever columns change; recorded in `run_info.json`.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: [&str; 12] = [
    "iteration",
    "v0_hat",
    "v1_hat",
    "step_norm",
    "u_hat",
    "branch",
    "N_used",
    "cert_required_N",
    "cert_satisfied",
    "lambda",
    "wall_ms",
    "seed",
];

/// `v0_hat` holds the average return (−V̂_0); `v1_hat` is V̂_1 as is.
/// Optional columns are empty when they do not apply to the algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub v0_hat: f64,
    pub v1_hat: f64,
    pub step_norm: f64,
    pub u_hat: Option<f64>,
    pub branch: String,
    #[serde(rename = "N_used")]
    pub n_used: usize,
    /// −1 encodes "no finite N certifies this step".
    #[serde(rename = "cert_required_N")]
    pub cert_required_n: Option<i64>,
    pub cert_satisfied: Option<bool>,
    pub lambda: Option<f64>,
    pub wall_ms: u64,
    pub seed: u64,
}

pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    /// Creates (truncating) the file and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(File::create(path)?));
        inner.write_record(METRICS_HEADER)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    /// Keeps the rows with `iteration <= keep_through` and appends after them.
    pub fn reopen(path: &Path, keep_through: usize) -> Result<Self> {
        let kept: Vec<MetricsRow> = read_metrics(path)?.into_iter().filter(|r| r.iteration <= keep_through).collect();
        let mut w = Self::create(path)?;
        for r in &kept {
            w.append(r)?;
        }
        drop(w);
        let file = OpenOptions::new().append(true).open(path)?;
        let inner = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
        Ok(MetricsWriter { inner })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != METRICS_HEADER {
        return Err(crate::Error::Config(format!("{}: unexpected metrics header {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Shortest round-trip text of a row, for diagnostics.
pub fn row_to_string(row: &MetricsRow) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(row)?;
    let bytes = w.into_inner().map_err(|e| crate::Error::Serde(e.to_string()))?;
    let mut s = String::from_utf8(bytes).map_err(|e| crate::Error::Serde(e.to_string()))?;
    if s.ends_with('\n') {
        s.pop();
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> MetricsRow {
        MetricsRow {
            iteration: i,
            v0_hat: -12.5,
            v1_hat: -0.25,
            step_norm: 0.1,
            u_hat: if i % 2 == 0 { Some(f64::INFINITY) } else { None },
            branch: "A_POS_C_NEG".into(),
            n_used: 50,
            cert_required_n: Some(-1),
            cert_satisfied: Some(false),
            lambda: None,
            wall_ms: 0,
            seed: 3,
        }
    }

    #[test]
    fn write_read_and_truncate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        for i in 1..=5 {
            w.append(&row(i)).unwrap();
        }
        drop(w);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&METRICS_HEADER.join(",")));
        assert_eq!(read_metrics(&path).unwrap(), (1..=5).map(row).collect::<Vec<_>>());
        let mut w = MetricsWriter::reopen(&path, 3).unwrap();
        w.append(&row(4)).unwrap();
        drop(w);
        assert_eq!(read_metrics(&path).unwrap(), (1..=4).map(row).collect::<Vec<_>>());
        assert!(row_to_string(&row(2)).unwrap().contains("inf"));
    }
}
