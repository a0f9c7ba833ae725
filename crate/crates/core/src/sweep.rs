//! Seeds × modes ablation: best dev CCC per run, then mean, spread and
//! relative gain over the baseline for each mode.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::Result;
use crate::train::{train, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub mode: Mode,
    pub best_dev_ccc: f64,
    pub best_epoch: usize,
    pub final_dev_ccc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: Mode,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
    /// `(mean − baseline mean) / baseline mean`; absent for the baseline.
    pub relative_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<ModeAggregate>,
}

/// Improvement of `score` over `baseline` as a fraction of the baseline.
pub fn relative_gain(score: f64, baseline: f64) -> f64 {
    (score - baseline) / baseline
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn summarize(rows: Vec<SweepRow>) -> SweepSummary {
    let stats: Vec<(Mode, usize, f64, f64)> = Mode::ALL
        .iter()
        .filter_map(|&mode| {
            let scores: Vec<f64> = rows.iter().filter(|r| r.mode == mode).map(|r| r.best_dev_ccc).collect();
            if scores.is_empty() {
                return None;
            }
            let (mean, sd) = mean_sd(&scores);
            Some((mode, scores.len(), mean, sd))
        })
        .collect();
    let base = stats.iter().find(|s| s.0 == Mode::Baseline).map(|s| s.2);
    let aggregates = stats
        .into_iter()
        .map(|(mode, runs, mean, sd)| ModeAggregate {
            mode,
            runs,
            mean,
            sd,
            relative_gain: match (mode, base) {
                (Mode::Baseline, _) | (_, None) => None,
                (_, Some(b)) => Some(relative_gain(mean, b)),
            },
        })
        .collect();
    SweepSummary { rows, aggregates }
}

/// Trains every seed in `cfg.sweep.seeds` in every mode, one run at a time.
pub fn run_sweep(cfg: &RunConfig, data: &Dataset, mut on_row: impl FnMut(&SweepRow)) -> Result<SweepSummary> {
    let mut rows = Vec::new();
    for &seed in &cfg.sweep.seeds {
        for mode in Mode::ALL {
            let mut run_cfg = cfg.clone();
            run_cfg.train.seed = seed;
            run_cfg.train.mode = mode;
            let report = train(&run_cfg.setup_for(data)?, data)?;
            let row = SweepRow {
                seed,
                mode,
                best_dev_ccc: report.best_dev_ccc,
                best_epoch: report.best_epoch,
                final_dev_ccc: report.final_dev_ccc,
                halted: report.halted,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(summarize(rows))
}

impl SweepSummary {
    pub fn halted(&self) -> bool {
        self.rows.iter().any(|r| r.halted.is_some())
    }

    /// Aligned plain-text table: one line per run, then one per mode.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6}  {:<10}  {:>12}  {:>10}  {:>13}",
            "seed", "mode", "best_dev_ccc", "best_epoch", "final_dev_ccc"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6}  {:<10}  {:>12.4}  {:>10}  {:>13.4}{}",
                r.seed,
                r.mode.name(),
                r.best_dev_ccc,
                r.best_epoch,
                r.final_dev_ccc,
                if r.halted.is_some() { "  halted" } else { "" }
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<10}  {:>4}  {:>8}  {:>8}  {:>8}",
            "mode", "runs", "mean", "sd", "gain"
        );
        for a in &self.aggregates {
            let gain = a
                .relative_gain
                .map_or("-".to_string(), |g| format!("{:+.1}%", 100.0 * g));
            let _ = writeln!(
                s,
                "{:<10}  {:>4}  {:>8.4}  {:>8.4}  {:>8}",
                a.mode.name(),
                a.runs,
                a.mean,
                a.sd,
                gain
            );
        }
        s
    }
}
