//! Temperature sweeps over `(entropy, efficiency)` and Pareto-front extraction.
//!
//! Probability inputs are lifted to logits as `ln max(p, 1e-12)`; each
//! temperature recalibrates from scratch, so every point keeps the marginal
//! coverage guarantee. At `T = 1` the probabilities are used unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::run_cp_seeded;
use crate::error::{domain, Result};
use crate::metrics::{coverage, efficiency};
use crate::prob::{softmax_with_temperature, Dataset, ProbVector};
use crate::scores::ScoreConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub temperature: f64,
    pub mean_entropy: f64,
    pub efficiency: f64,
    pub coverage: f64,
}

/// 40 log-spaced temperatures in `[0.05, 20]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(0.05, 20.0, 40)
}

/// `n` log-spaced points from `lo` to `hi`, both included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| match i {
            0 => lo,
            i if i == n - 1 => hi,
            i => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

/// Tempered copy of `p`; the identity at `t == 1`.
pub fn temper(p: &ProbVector, t: f64) -> Result<ProbVector> {
    if t == 1.0 {
        return Ok(p.clone());
    }
    softmax_with_temperature(&p.log_probs(), t)
}

/// Tempers a whole dataset.
pub fn temper_dataset(d: &Dataset, t: f64) -> Result<Dataset> {
    d.map_probs(|p| temper(p, t))
}

/// Evaluates each temperature of `grid` by tempering both splits,
/// recalibrating on `cal_set` and testing on `test_set`. Points follow grid order.
pub fn temp_sweep(
    cal_set: &Dataset,
    test_set: &Dataset,
    alpha: f64,
    grid: &[f64],
    cfg: ScoreConfig,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return domain("temperature grid is empty");
    }
    if let Some(t) = grid.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return domain(format!("temperature must be positive and finite, got {t}"));
    }
    grid.par_iter()
        .map(|&t| {
            let cal = temper_dataset(cal_set, t)?;
            let test = temper_dataset(test_set, t)?;
            let (_, sets) = run_cp_seeded(&cal, &test, alpha, cfg, seed)?;
            Ok(SweepPoint {
                temperature: t,
                mean_entropy: test.probs().map(ProbVector::entropy).sum::<f64>() / test.len() as f64,
                efficiency: efficiency(&sets)?,
                coverage: coverage(&sets, &test.labels())?,
            })
        })
        .collect()
}

fn dominates(a: &SweepPoint, b: &SweepPoint) -> bool {
    a.mean_entropy <= b.mean_entropy
        && a.efficiency <= b.efficiency
        && (a.mean_entropy < b.mean_entropy || a.efficiency < b.efficiency)
}

/// Points not dominated in `(mean_entropy, efficiency)`, both minimized,
/// sorted by entropy. Points equal in both coordinates keep one representative.
pub fn pareto_filter(points: &[SweepPoint]) -> Vec<SweepPoint> {
    let mut front: Vec<SweepPoint> = Vec::new();
    for p in points {
        if points.iter().any(|q| dominates(q, p)) {
            continue;
        }
        if front.iter().any(|f| f.mean_entropy == p.mean_entropy && f.efficiency == p.efficiency) {
            continue;
        }
        front.push(*p);
    }
    front.sort_by(|a, b| a.mean_entropy.total_cmp(&b.mean_entropy));
    front
}

/// Lowest-efficiency point with `mean_entropy <= threshold`.
pub fn select_by_entropy(points: &[SweepPoint], threshold: f64) -> Option<SweepPoint> {
    points
        .iter()
        .filter(|p| p.mean_entropy <= threshold)
        .min_by(|a, b| a.efficiency.total_cmp(&b.efficiency))
        .copied()
}
