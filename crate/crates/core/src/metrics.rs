//! Evaluation metrics for prediction sets.
//!
//! Besides marginal coverage and efficiency this covers per-class coverage,
//! shortfall distances to the target coverage, worst-slab coverage (WSC) and
//! size-stratified coverage violation (SSCV).
//!
//! WSC projects features onto seeded random unit directions and, for each
//! direction, finds the slab `[a, b]` holding at least a `delta` fraction of
//! the points with the lowest coverage. The per-direction minimum is found
//! exactly with Dinkelbach iterations on `hits - t * count` over contiguous
//! runs of distinct projection values, which is linear per iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::PredictionSet;
use crate::error::{domain, Result};
use crate::prob::ProbVector;

/// Metrics of one calibrate-then-test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub coverage: f64,
    pub efficiency: f64,
    pub mean_entropy: f64,
    /// `None` for classes absent from the test labels.
    pub class_coverage: Vec<Option<f64>>,
    pub wsc: f64,
    pub sscv: f64,
    pub empty_set_rate: f64,
}

/// Tuning knobs for [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub wsc_delta: f64,
    pub wsc_directions: usize,
    pub wsc_seed: u64,
    /// Inclusive set-size strata for SSCV; `None` uses [`default_sscv_bins`].
    pub sscv_bins: Option<Vec<(usize, usize)>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { wsc_delta: 0.25, wsc_directions: 1000, wsc_seed: 0, sscv_bins: None }
    }
}

fn check_len(sets: &[PredictionSet], labels: &[usize]) -> Result<()> {
    if sets.len() != labels.len() {
        return domain(format!("{} sets but {} labels", sets.len(), labels.len()));
    }
    Ok(())
}

/// Fraction of samples whose label lies in its set.
pub fn coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64> {
    check_len(sets, labels)?;
    if sets.is_empty() {
        return domain("coverage of an empty sample");
    }
    let hits = sets.iter().zip(labels).filter(|(s, &y)| s.contains(y)).count();
    Ok(hits as f64 / sets.len() as f64)
}

/// Mean prediction-set size.
pub fn efficiency(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return domain("efficiency of an empty list of sets");
    }
    Ok(sets.iter().map(|s| s.size() as f64).sum::<f64>() / sets.len() as f64)
}

pub fn empty_set_rate(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return domain("empty list of sets");
    }
    Ok(sets.iter().filter(|s| s.size() == 0).count() as f64 / sets.len() as f64)
}

/// Per-class coverage over samples with that true label; absent classes are `None`.
pub fn class_coverage(sets: &[PredictionSet], labels: &[usize], k: usize) -> Result<Vec<Option<f64>>> {
    check_len(sets, labels)?;
    let mut hits = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for (s, &y) in sets.iter().zip(labels) {
        if y >= k {
            return domain(format!("label {y} out of range for K={k}"));
        }
        counts[y] += 1;
        if s.contains(y) {
            hits[y] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&counts)
        .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

/// Norm of the shortfalls `target - cov_k` over present classes below target.
pub fn coverage_distance(class_cov: &[Option<f64>], target: f64, norm: Norm) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return domain(format!("target coverage must be in (0, 1), got {target}"));
    }
    let gaps = class_cov.iter().flatten().map(|&c| (target - c).max(0.0));
    Ok(match norm {
        Norm::L1 => gaps.sum(),
        Norm::L2 => gaps.map(|g| g * g).sum::<f64>().sqrt(),
    })
}

/// Lowest coverage over slabs along one projection.
///
/// `proj[i]` is the projected coordinate of sample `i` and `hit[i]` whether it
/// was covered. Slabs are value intervals, so tied projections enter together.
pub fn worst_slab_along(proj: &[f64], hit: &[bool], delta: f64) -> Result<f64> {
    if proj.len() != hit.len() {
        return domain("projection and hit vectors differ in length");
    }
    if proj.len() < 2 {
        return domain("worst-slab coverage needs at least 2 samples");
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return domain(format!("delta must lie in (0, 1], got {delta}"));
    }
    let n = proj.len();
    let min_count = ((delta * n as f64) - 1e-9).ceil().max(1.0) as usize;

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]));
    // group tied projections: (count, hits)
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last = f64::NAN;
    for &i in &idx {
        if groups.is_empty() || proj[i] != last {
            groups.push((0, 0));
            last = proj[i];
        }
        let g = groups.last_mut().unwrap();
        g.0 += 1;
        g.1 += hit[i] as usize;
    }
    let mut cum_c = vec![0usize; groups.len() + 1];
    let mut cum_h = vec![0usize; groups.len() + 1];
    for (j, &(c, h)) in groups.iter().enumerate() {
        cum_c[j + 1] = cum_c[j] + c;
        cum_h[j + 1] = cum_h[j] + h;
    }

    // Dinkelbach: t <- ratio of the slab minimizing hits - t * count.
    let mut t = cum_h[groups.len()] as f64 / n as f64;
    for _ in 0..100 {
        let (value, h, c) = min_linear_slab(&cum_c, &cum_h, min_count, t);
        if value >= -1e-12 {
            break;
        }
        let next = h as f64 / c as f64;
        if next >= t {
            break;
        }
        t = next;
    }
    Ok(t)
}

/// Minimizes `(H_b - H_a) - t (C_b - C_a)` over `a < b` with `C_b - C_a >= min_count`.
/// Returns the minimum together with the slab's hit and point counts.
fn min_linear_slab(cum_c: &[usize], cum_h: &[usize], min_count: usize, t: f64) -> (f64, usize, usize) {
    let f = |j: usize| cum_h[j] as f64 - t * cum_c[j] as f64;
    let mut best = (f64::INFINITY, 0, 1);
    // running argmax of f over admissible left endpoints
    let mut a_ptr = 0;
    let mut best_a: Option<usize> = None;
    for b in 1..cum_c.len() {
        while a_ptr < b && cum_c[b] - cum_c[a_ptr] >= min_count {
            if best_a.is_none_or(|a| f(a_ptr) > f(a)) {
                best_a = Some(a_ptr);
            }
            a_ptr += 1;
        }
        if let Some(a) = best_a {
            let v = f(b) - f(a);
            if v < best.0 {
                best = (v, cum_h[b] - cum_h[a], cum_c[b] - cum_c[a]);
            }
        }
    }
    best
}

/// Seeded unit direction `index` of dimension `dim`.
pub fn wsc_direction(dim: usize, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Worst-slab coverage: minimum slab coverage over `n_directions` seeded directions.
pub fn wsc(
    features: &[ProbVector],
    sets: &[PredictionSet],
    labels: &[usize],
    delta: f64,
    n_directions: usize,
    seed: u64,
) -> Result<f64> {
    check_len(sets, labels)?;
    if features.len() != sets.len() {
        return domain("features and sets differ in length");
    }
    if features.len() < 2 {
        return domain("worst-slab coverage needs at least 2 samples");
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return domain(format!("delta must lie in (0, 1], got {delta}"));
    }
    if n_directions == 0 {
        return domain("need at least one direction");
    }
    let hit: Vec<bool> = sets.iter().zip(labels).map(|(s, &y)| s.contains(y)).collect();
    let dim = features[0].k();
    let per_dir = (0..n_directions)
        .into_par_iter()
        .map(|d| {
            let v = wsc_direction(dim, seed, d);
            let proj: Vec<f64> = features
                .iter()
                .map(|f| f.as_slice().iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            worst_slab_along(&proj, &hit, delta)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_dir.into_iter().fold(f64::INFINITY, f64::min))
}

/// Set-size strata `{0-1, 2-3, 4-6, 7-10, 11-K}`, truncated at `K`.
pub fn default_sscv_bins(k: usize) -> Vec<(usize, usize)> {
    [(0, 1), (2, 3), (4, 6), (7, 10)]
        .into_iter()
        .filter(|&(lo, _)| lo <= k)
        .map(|(lo, hi)| (lo, hi.min(k)))
        .chain((k >= 11).then_some((11, k)))
        .collect()
}

/// Largest `|coverage(stratum) - (1 - alpha)|` over occupied size strata.
pub fn sscv(sets: &[PredictionSet], labels: &[usize], alpha: f64, bins: &[(usize, usize)]) -> Result<f64> {
    check_len(sets, labels)?;
    let target = 1.0 - alpha;
    let mut worst: f64 = 0.0;
    for &(lo, hi) in bins {
        let (mut n, mut h) = (0usize, 0usize);
        for (s, &y) in sets.iter().zip(labels) {
            if (lo..=hi).contains(&s.size()) {
                n += 1;
                h += s.contains(y) as usize;
            }
        }
        if n > 0 {
            worst = worst.max((h as f64 / n as f64 - target).abs());
        }
    }
    Ok(worst)
}

/// All metrics for one run; `features` feed both entropy and WSC.
pub fn evaluate(
    features: &[ProbVector],
    sets: &[PredictionSet],
    labels: &[usize],
    alpha: f64,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let k = features.first().map(ProbVector::k).ok_or_else(|| crate::Error::Domain("nothing to evaluate".into()))?;
    let bins = opts.sscv_bins.clone().unwrap_or_else(|| default_sscv_bins(k));
    Ok(EvalReport {
        coverage: coverage(sets, labels)?,
        efficiency: efficiency(sets)?,
        mean_entropy: features.iter().map(ProbVector::entropy).sum::<f64>() / features.len() as f64,
        class_coverage: class_coverage(sets, labels, k)?,
        wsc: wsc(features, sets, labels, opts.wsc_delta, opts.wsc_directions, opts.wsc_seed)?,
        sscv: sscv(sets, labels, alpha, &bins)?,
        empty_set_rate: empty_set_rate(sets)?,
    })
}

/// Mean and sample standard deviation (`None` for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.3}±{:.3}", self.mean, s),
            None => write!(f, "{:.3}", self.mean),
        }
    }
}

/// Aggregate of repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub coverage: MeanStd,
    pub efficiency: MeanStd,
    pub mean_entropy: MeanStd,
    pub wsc: MeanStd,
    pub sscv: MeanStd,
    pub empty_set_rate: MeanStd,
    pub min_class_coverage: MeanStd,
}

impl Aggregate {
    pub fn of(reports: &[EvalReport]) -> Result<Self> {
        if reports.is_empty() {
            return domain("nothing to aggregate");
        }
        let col = |f: fn(&EvalReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            coverage: col(|r| r.coverage),
            efficiency: col(|r| r.efficiency),
            mean_entropy: col(|r| r.mean_entropy),
            wsc: col(|r| r.wsc),
            sscv: col(|r| r.sscv),
            empty_set_rate: col(|r| r.empty_set_rate),
            min_class_coverage: col(|r| r.class_coverage.iter().flatten().copied().fold(f64::INFINITY, f64::min)),
        })
    }
}
