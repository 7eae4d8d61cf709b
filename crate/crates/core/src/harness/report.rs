//! Run reports: one JSON document plus flat CSV tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::EpochRecord;
use crate::bounds::BoundReport;
use crate::error::Result;
use crate::metrics::{Aggregate, EvalReport};
use crate::tempering::SweepPoint;

use super::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

/// Metrics of one calibration/test re-split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    /// Adapter training repeat the record belongs to; 0 without training.
    pub repeat: usize,
    pub split: usize,
    pub seed: u64,
    /// `None` when the threshold is infinite.
    pub eta_hat: Option<f64>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub repeat: usize,
    pub seed: u64,
    pub adapter_path: PathBuf,
    pub selected_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

/// Summary of one family of bound checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub check: String,
    pub k: usize,
    pub trials: usize,
    pub holds: usize,
    pub min_slack: f64,
    /// Hold rate needed to pass; 1 for deterministic bounds.
    pub required_rate: f64,
    pub passed: bool,
    /// Individual reports, kept for the oracle-dependent checks and tightness cases.
    pub details: Vec<BoundReport>,
}

impl BoundSummary {
    pub fn hold_rate(&self) -> f64 {
        self.holds as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub splits: Vec<SplitRecord>,
    pub aggregate: Option<Aggregate>,
    /// Uncorrected metrics on the same splits, for training runs.
    pub baseline_splits: Vec<SplitRecord>,
    pub baseline_aggregate: Option<Aggregate>,
    pub training: Vec<TrainRun>,
    pub sweep: Vec<SweepPoint>,
    pub pareto: Vec<SweepPoint>,
    pub selection: Option<SweepPoint>,
    pub bounds: Vec<BoundSummary>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            provenance: Provenance {
                command: command.to_string(),
                config_hash: config.hash(),
                seed: config.seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
            config: config.clone(),
            splits: Vec::new(),
            aggregate: None,
            baseline_splits: Vec::new(),
            baseline_aggregate: None,
            training: Vec::new(),
            sweep: Vec::new(),
            pareto: Vec::new(),
            selection: None,
            bounds: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn bounds_passed(&self) -> bool {
        self.bounds.iter().all(|b| b.passed)
    }

    /// Writes `report.json` and the non-empty CSV tables into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        if !self.splits.is_empty() {
            write_splits(&dir.join("splits.csv"), &self.splits)?;
        }
        if !self.baseline_splits.is_empty() {
            write_splits(&dir.join("baseline_splits.csv"), &self.baseline_splits)?;
        }
        if !self.training.is_empty() {
            write_history(&dir.join("history.csv"), &self.training)?;
        }
        if !self.sweep.is_empty() {
            write_rows(&dir.join("sweep.csv"), &self.sweep)?;
            write_rows(&dir.join("pareto.csv"), &self.pareto)?;
        }
        if !self.bounds.is_empty() {
            write_bounds(&dir.join("bounds.csv"), &self.bounds)?;
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SplitRow {
    repeat: usize,
    split: usize,
    seed: u64,
    eta_hat: Option<f64>,
    coverage: f64,
    efficiency: f64,
    mean_entropy: f64,
    wsc: f64,
    sscv: f64,
    empty_set_rate: f64,
    min_class_coverage: f64,
}

fn write_splits(path: &Path, splits: &[SplitRecord]) -> Result<()> {
    let rows: Vec<SplitRow> = splits
        .iter()
        .map(|s| SplitRow {
            repeat: s.repeat,
            split: s.split,
            seed: s.seed,
            eta_hat: s.eta_hat,
            coverage: s.report.coverage,
            efficiency: s.report.efficiency,
            mean_entropy: s.report.mean_entropy,
            wsc: s.report.wsc,
            sscv: s.report.sscv,
            empty_set_rate: s.report.empty_set_rate,
            min_class_coverage: s.report.class_coverage.iter().flatten().copied().fold(f64::INFINITY, f64::min),
        })
        .collect();
    write_rows(path, &rows)
}

#[derive(Serialize)]
struct HistoryRow {
    repeat: usize,
    epoch: usize,
    total: f64,
    focal: f64,
    ineff: f64,
    cond: f64,
    entropy_mean: f64,
    valid_coverage: f64,
    valid_efficiency: f64,
    valid_mean_entropy: f64,
}

fn write_history(path: &Path, runs: &[TrainRun]) -> Result<()> {
    let rows: Vec<HistoryRow> = runs
        .iter()
        .flat_map(|r| {
            r.history.iter().map(move |h| HistoryRow {
                repeat: r.repeat,
                epoch: h.epoch,
                total: h.loss.total,
                focal: h.loss.focal,
                ineff: h.loss.ineff,
                cond: h.loss.cond,
                entropy_mean: h.loss.entropy_mean,
                valid_coverage: h.valid.coverage,
                valid_efficiency: h.valid.efficiency,
                valid_mean_entropy: h.valid.mean_entropy,
            })
        })
        .collect();
    write_rows(path, &rows)
}

#[derive(Serialize)]
struct BoundRow<'a> {
    check: &'a str,
    k: usize,
    trials: usize,
    holds: usize,
    hold_rate: f64,
    required_rate: f64,
    min_slack: f64,
    passed: bool,
}

fn write_bounds(path: &Path, bounds: &[BoundSummary]) -> Result<()> {
    let rows: Vec<BoundRow> = bounds
        .iter()
        .map(|b| BoundRow {
            check: &b.check,
            k: b.k,
            trials: b.trials,
            holds: b.holds,
            hold_rate: b.hold_rate(),
            required_rate: b.required_rate,
            min_slack: b.min_slack,
            passed: b.passed,
        })
        .collect();
    write_rows(path, &rows)
}
