//! Collapses metrics files into the mean-return / percent-safe table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{read_metrics, MetricsRow};
use super::train::{CONFIG_FILE, METRICS_FILE};
use crate::error::{Error, Result};

/// Rows averaged for the return column: min(100, K/2), at least 1.
pub fn window(k: usize) -> usize {
    (k / 2).clamp(1, 100)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub rows: usize,
    pub window: usize,
    /// Mean of `v0_hat` (the average return) over the last `window` rows.
    pub mean_return: f64,
    /// Share of rows with V̂_1 ≤ 0, in percent.
    pub percent_safe: f64,
}

/// Statistics from the metrics rows alone; K is the number of rows.
pub fn summarize_rows(rows: &[MetricsRow]) -> RunStats {
    let w = window(rows.len());
    let tail = &rows[rows.len().saturating_sub(w)..];
    let mean_return =
        if tail.is_empty() { f64::NAN } else { tail.iter().map(|r| r.v0_hat).sum::<f64>() / tail.len() as f64 };
    let safe = rows.iter().filter(|r| r.v1_hat <= 0.0).count();
    let percent_safe = if rows.is_empty() { f64::NAN } else { 100.0 * safe as f64 / rows.len() as f64 };
    RunStats { rows: rows.len(), window: w, mean_return, percent_safe }
}

/// "−52.99 (26.68%)"
pub fn format_cell(s: &RunStats) -> String {
    format!("{:.2} ({:.2}%)", s.mean_return, s.percent_safe)
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub algo: String,
    pub env: String,
    pub seed: u64,
    pub stats: RunStats,
}

pub fn load_run(dir: &Path) -> Result<RunRecord> {
    let rows = read_metrics(&dir.join(METRICS_FILE))?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: metrics file has no rows", dir.display())));
    }
    // Labels only; the statistics come from the CSV.
    let (algo, env) = match RunConfig::load(&dir.join(CONFIG_FILE)) {
        Ok(cfg) => (cfg.algo.as_str().to_string(), cfg.env.as_str().to_string()),
        Err(_) => ("?".to_string(), "?".to_string()),
    };
    Ok(RunRecord { dir: dir.to_path_buf(), algo, env, seed: rows[0].seed, stats: summarize_rows(&rows) })
}

/// One line per run, then the mean over seeds for each (algorithm, env).
pub fn summary_table(runs: &[RunRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:<18} {:>6}  return (safe %)", "algorithm", "environment", "seed");
    for r in runs {
        let _ = writeln!(out, "{:<14} {:<18} {:>6}  {}", r.algo, r.env, r.seed, format_cell(&r.stats));
    }
    let mut groups: BTreeMap<(&str, &str), Vec<&RunStats>> = BTreeMap::new();
    for r in runs {
        groups.entry((&r.algo, &r.env)).or_default().push(&r.stats);
    }
    if groups.len() < runs.len() {
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<14} {:<18} {:>6}  mean return (mean safe %)", "algorithm", "environment", "runs");
        for ((algo, env), v) in &groups {
            let n = v.len() as f64;
            let mean = RunStats {
                rows: v.iter().map(|s| s.rows).sum(),
                window: v[0].window,
                mean_return: v.iter().map(|s| s.mean_return).sum::<f64>() / n,
                percent_safe: v.iter().map(|s| s.percent_safe).sum::<f64>() / n,
            };
            let _ = writeln!(out, "{:<14} {:<18} {:>6}  {}", algo, env, v.len(), format_cell(&mean));
        }
    }
    out
}
