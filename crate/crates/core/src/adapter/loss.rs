//! Training losses and their gradients with respect to the corrected
//! probabilities.
//!
//! The inefficiency and conditional-coverage terms simulate conformal
//! prediction inside each batch: the first half calibrates a smooth threshold
//! `tau_s`, the second half measures a sigmoid-relaxed set size against it.
//! APS scores treat each row's sort permutation as a constant of the forward
//! pass, so gradients flow through the cumulative sums only.
//!
//! Functions here work on raw probability rows (`&[f64]`), which keeps them
//! differentiable in every coordinate for finite-difference checks.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::prob::{entropy_raw, sort_desc_raw, ProbVector, LOG_CLAMP};

use super::TrainConfig;

/// Per-batch loss values. `total = focal + beta * ineff - cond` where `cond`
/// is the class-averaged smoothed coverage (zero unless enabled).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub focal: f64,
    pub ineff: f64,
    pub cond: f64,
    pub entropy_mean: f64,
}

/// `-ln p_y`, with `p_y` clamped at `1e-12`.
pub fn loss_ce(pi_hat: &ProbVector, y: usize) -> f64 {
    -(pi_hat[y].max(LOG_CLAMP).ln())
}

/// `-(1 - p_y)^gamma ln p_y`; equals [`loss_ce`] exactly at `gamma = 0`.
pub fn loss_focal(pi_hat: &ProbVector, y: usize, gamma: f64) -> f64 {
    focal_with_grad(pi_hat.as_slice(), y, gamma).0
}

/// Focal loss of one row and its derivative with respect to `p[y]`.
pub fn focal_with_grad(p: &[f64], y: usize, gamma: f64) -> (f64, f64) {
    let clamped = p[y] < LOG_CLAMP;
    let py = p[y].max(LOG_CLAMP);
    let q = 1.0 - py;
    let log_p = py.ln();
    let value = q.powf(gamma) * -log_p;
    if clamped {
        return (value, 0.0);
    }
    let damp = if gamma == 0.0 || log_p == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * log_p };
    (value, damp - q.powf(gamma) / py)
}

/// Interpolated empirical quantile and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothQuantile {
    pub value: f64,
    /// `d value / d scores[i]`; nonzero on at most two entries.
    pub weights: Vec<f64>,
}

/// Piecewise-linear quantile at continuous 1-based position `level * m`.
///
/// Positions below 1 clamp to the minimum and above `m` to the maximum, so
/// a level above one returns the largest score. An integer position returns
/// exactly that order statistic.
pub fn smooth_quantile(scores: &[f64], level: f64) -> Result<SmoothQuantile> {
    if scores.is_empty() {
        return domain("smooth quantile of an empty score set");
    }
    if !(level > 0.0) || !level.is_finite() {
        return domain(format!("quantile level must be positive, got {level}"));
    }
    let m = scores.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut weights = vec![0.0; m];
    let pos = level * m as f64;
    if pos <= 1.0 {
        weights[order[0]] = 1.0;
        return Ok(SmoothQuantile { value: scores[order[0]], weights });
    }
    if pos >= m as f64 {
        weights[order[m - 1]] = 1.0;
        return Ok(SmoothQuantile { value: scores[order[m - 1]], weights });
    }
    let lo = pos.floor();
    let frac = pos - lo;
    let (a, b) = (order[lo as usize - 1], order[lo as usize]);
    weights[a] = 1.0 - frac;
    weights[b] += frac;
    Ok(SmoothQuantile { value: (1.0 - frac) * scores[a] + frac * scores[b], weights })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// APS scores of all classes for a row, with the permutation frozen.
struct RowScores {
    rank: Vec<usize>,
    order: Vec<usize>,
    scores: Vec<f64>,
}

fn row_scores(p: &[f64]) -> RowScores {
    let s = sort_desc_raw(p);
    let cum = s.cumulative();
    let scores = (0..p.len()).map(|c| cum[s.rank[c]]).collect();
    RowScores { rank: s.rank, order: s.order, scores }
}

/// Adds `coef * d V(y) / d p` into `grad`: one for every class ranked at or above `y`.
fn add_score_grad(grad: &mut [f64], rs: &RowScores, y: usize, coef: f64) {
    for r in 0..=rs.rank[y] {
        grad[rs.order[r]] += coef;
    }
}

/// Shared pseudo-calibration state of a batch.
struct PseudoCal {
    n_cal: usize,
    rows: Vec<RowScores>,
    true_scores: Vec<f64>,
    tau: SmoothQuantile,
}

fn pseudo_calibrate(probs: &[Vec<f64>], labels: &[usize], alpha: f64) -> Result<PseudoCal> {
    if probs.len() != labels.len() {
        return domain("batch rows and labels differ in length");
    }
    if probs.len() < 4 {
        return domain(format!("batch of {} is too small to split into halves", probs.len()));
    }
    let n_cal = probs.len() / 2;
    let rows: Vec<RowScores> = probs.iter().map(|p| row_scores(p)).collect();
    let true_scores: Vec<f64> = (0..n_cal).map(|j| rows[j].scores[labels[j]]).collect();
    let level = (1.0 - alpha) * (1.0 + 1.0 / n_cal as f64);
    let tau = smooth_quantile(&true_scores, level)?;
    Ok(PseudoCal { n_cal, rows, true_scores, tau })
}

impl PseudoCal {
    /// Pushes `d_tau` back onto the calibration-half rows.
    fn backprop_tau(&self, d_tau: f64, labels: &[usize], grad: &mut [Vec<f64>]) {
        for j in 0..self.n_cal {
            let w = self.tau.weights[j];
            if w != 0.0 {
                add_score_grad(&mut grad[j], &self.rows[j], labels[j], d_tau * w);
            }
        }
    }
}

/// Output of [`ineff_with_grad`].
#[derive(Debug, Clone)]
pub struct IneffOutput {
    pub loss: f64,
    pub tau: f64,
    /// Smoothed set size of each pseudo-test row.
    pub smooth_sizes: Vec<f64>,
    pub grad: Vec<Vec<f64>>,
}

/// Smoothed set-size hinge `mean max(0, sum_k sigmoid((tau - V_k) / T) - kappa)`
/// over the pseudo-test half.
pub fn ineff_with_grad(probs: &[Vec<f64>], labels: &[usize], cfg: &TrainConfig) -> Result<IneffOutput> {
    let pc = pseudo_calibrate(probs, labels, cfg.alpha)?;
    let t = cfg.sig_temp;
    let tau = pc.tau.value;
    let n_test = probs.len() - pc.n_cal;
    let mut grad = vec![vec![0.0; probs[0].len()]; probs.len()];
    let mut loss = 0.0;
    let mut d_tau = 0.0;
    let mut smooth_sizes = Vec::with_capacity(n_test);
    for i in pc.n_cal..probs.len() {
        let rs = &pc.rows[i];
        let sig: Vec<f64> = rs.scores.iter().map(|v| sigmoid((tau - v) / t)).collect();
        let size: f64 = sig.iter().sum();
        smooth_sizes.push(size);
        if size <= cfg.kappa {
            continue;
        }
        loss += (size - cfg.kappa) / n_test as f64;
        let scale = 1.0 / (n_test as f64 * t);
        // d size / d V_k = -sigma'_k / t; V_k sums ranks 0..=rank(k)
        let mut suffix = 0.0;
        for r in (0..rs.order.len()).rev() {
            let c = rs.order[r];
            let ds = sig[c] * (1.0 - sig[c]);
            suffix -= ds * scale;
            d_tau += ds * scale;
            grad[i][c] += suffix;
        }
    }
    pc.backprop_tau(d_tau, labels, &mut grad);
    Ok(IneffOutput { loss, tau, smooth_sizes, grad })
}

/// Output of [`cond_with_grad`].
#[derive(Debug, Clone)]
pub struct CondOutput {
    /// `L_k = -(smoothed coverage of class k)` on the pseudo-calibration half;
    /// `None` for classes absent from it.
    pub per_class: Vec<Option<f64>>,
    /// Mean smoothed coverage over present classes.
    pub mean_coverage: f64,
    /// Gradient of `mean_coverage`.
    pub grad: Vec<Vec<f64>>,
}

/// Class-conditional smoothed coverage on the pseudo-calibration half, with the
/// indicator `1{V(x, y) <= tau_s}` relaxed to `sigmoid((tau_s - V(x, y)) / T)`.
pub fn cond_with_grad(probs: &[Vec<f64>], labels: &[usize], cfg: &TrainConfig) -> Result<CondOutput> {
    let pc = pseudo_calibrate(probs, labels, cfg.alpha)?;
    let k = probs[0].len();
    let t = cfg.sig_temp;
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k];
    let sig: Vec<f64> = pc.true_scores.iter().map(|s| sigmoid((pc.tau.value - s) / t)).collect();
    for j in 0..pc.n_cal {
        counts[labels[j]] += 1;
        sums[labels[j]] += sig[j];
    }
    let per_class: Vec<Option<f64>> =
        counts.iter().zip(&sums).map(|(&c, &s)| (c > 0).then(|| -s / c as f64)).collect();
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let mean_coverage = -per_class.iter().flatten().sum::<f64>() / present;

    let mut grad = vec![vec![0.0; k]; probs.len()];
    let mut d_tau = 0.0;
    for j in 0..pc.n_cal {
        let y = labels[j];
        // d mean / d a_j with a_j = (tau - s_j) / t
        let da = sig[j] * (1.0 - sig[j]) / (present * counts[y] as f64 * t);
        d_tau += da;
        add_score_grad(&mut grad[j], &pc.rows[j], y, -da);
    }
    pc.backprop_tau(d_tau, labels, &mut grad);
    Ok(CondOutput { per_class, mean_coverage, grad })
}

/// Full objective on a batch of corrected probability rows, with its
/// gradient with respect to every entry.
pub fn batch_loss_with_grad(
    probs: &[Vec<f64>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    if probs.is_empty() || probs.len() != labels.len() {
        return domain("batch rows and labels must be non-empty and equally long");
    }
    let b = probs.len() as f64;
    let k = probs[0].len();
    let mut grad = vec![vec![0.0; k]; probs.len()];
    let mut focal = 0.0;
    for (i, (p, &y)) in probs.iter().zip(labels).enumerate() {
        let (v, d) = focal_with_grad(p, y, cfg.gamma);
        focal += v / b;
        grad[i][y] += d / b;
    }
    let entropy_mean = probs.iter().map(|p| entropy_raw(p)).sum::<f64>() / b;

    let mut ineff = 0.0;
    if cfg.beta != 0.0 {
        let out = ineff_with_grad(probs, labels, cfg)?;
        ineff = out.loss;
        accumulate(&mut grad, &out.grad, cfg.beta);
    }
    let mut cond = 0.0;
    if cfg.conditional {
        let out = cond_with_grad(probs, labels, cfg)?;
        cond = out.mean_coverage;
        accumulate(&mut grad, &out.grad, -1.0);
    }
    let total = focal + cfg.beta * ineff - cond;
    Ok((LossBreakdown { total, focal, ineff, cond, entropy_mean }, grad))
}

fn accumulate(into: &mut [Vec<f64>], from: &[Vec<f64>], coef: f64) {
    for (a, b) in into.iter_mut().zip(from) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += coef * y;
        }
    }
}

/// Smoothed set-size loss on probability vectors.
pub fn loss_ineff(batch: &[ProbVector], labels: &[usize], cfg: &TrainConfig) -> Result<f64> {
    let rows: Vec<Vec<f64>> = batch.iter().map(|p| p.as_slice().to_vec()).collect();
    Ok(ineff_with_grad(&rows, labels, cfg)?.loss)
}

/// Per-class `L_k = -mean sigmoid((tau - V(x, y)) / T)` over the given
/// pseudo-calibration samples; classes with no samples get 0.
pub fn loss_cond(batch: &[ProbVector], labels: &[usize], tau: f64, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if batch.is_empty() || batch.len() != labels.len() {
        return domain("batch rows and labels must be non-empty and equally long");
    }
    let k = batch[0].k();
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k];
    for (p, &y) in batch.iter().zip(labels) {
        if y >= k {
            return domain(format!("label {y} out of range for K={k}"));
        }
        let v = row_scores(p.as_slice()).scores[y];
        counts[y] += 1;
        sums[y] += sigmoid((tau - v) / cfg.sig_temp);
    }
    Ok(counts.iter().zip(&sums).map(|(&c, &s)| if c > 0 { -s / c as f64 } else { 0.0 }).collect())
}
