//! Numerical checks of the efficiency/entropy bounds for the APS score.
//!
//! * [`prop1_check`]: per-sample bound
//!   `avg_score(p) <= min(C_K + 1 - H(p), 1 + H(p))` with
//!   `C_K = ln sum_{k=1..K} exp(-(k-1)/K)`.
//! * [`prop2_check`]: the calibrated threshold against the tail subset
//!   `{V(X, Y) >= eta}` of the calibration set,
//!   `eta <= E[avg_score | tail] + E[sqrt(2 (H(pi) + ln K)) | tail] + tau`,
//!   holding with probability at least `1 - exp(-2 alpha tau^2 n / (1 - eta)^2)`.
//! * [`thm2_check`]: expected normalized set size against the explicit
//!   constant chain
//!   `(1-a)(1-2mu) E[H | tail] + (1-a)(mu C_K - (K+1)/2K) + (1-a)(1-2mu) + C`
//!   with `C = E[sqrt(2 (H(pi) + ln K)) | tail] + tau + 1` and
//!   `mu = P(H(p) >= C_K / 2 | tail)`.
//!
//! Conditional expectations are plain empirical means over the tail subset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, predict_set, CalibrationResult};
use crate::error::{domain, Result};
use crate::prob::{entropy, Dataset, ProbVector};
use crate::scores::{aps_scores_all, avg_score, ScoreConfig, ScoreKind};

/// Absolute slack under which a bound still counts as holding.
pub const HOLD_TOL: f64 = 1e-9;

/// Tail subset of a calibration set: samples whose true-label score is at least the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSubset {
    pub indices: Vec<usize>,
    pub eta_hat: f64,
    pub alpha: f64,
}

/// Outcome of one bound check with the values that entered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub slack: f64,
    /// True when the check is vacuous and was not evaluated (e.g. `eta = 1`).
    pub skipped: bool,
    pub components: BTreeMap<String, f64>,
}

impl BoundReport {
    fn new(lhs: f64, rhs: f64, components: BTreeMap<String, f64>) -> Self {
        Self { lhs, rhs, holds: lhs <= rhs + HOLD_TOL, slack: rhs - lhs, skipped: false, components }
    }
}

/// `ln sum_{k=1..K} exp(-(k-1)/K)`.
pub fn c_k(k: usize) -> Result<f64> {
    if k < 1 {
        return domain("C_K needs K >= 1");
    }
    let kf = k as f64;
    // Neumaier-compensated sum
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for i in 0..k {
        let x = (-(i as f64) / kf).exp();
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    Ok((sum + comp).ln())
}

/// Which expression of the per-sample bound is the smaller one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prop1Branch {
    /// `1 + H`, active for `H <= C_K / 2`.
    LowEntropy,
    /// `C_K + 1 - H`, active above the crossing.
    HighEntropy,
}

/// Per-sample average-score bound.
pub fn prop1_check(p: &ProbVector) -> BoundReport {
    let ck = c_k(p.k()).expect("K >= 2");
    let h = entropy(p);
    let high = ck + 1.0 - h;
    let low = 1.0 + h;
    let mut comps = BTreeMap::new();
    comps.insert("C_K".into(), ck);
    comps.insert("entropy".into(), h);
    comps.insert("bound_high_entropy".into(), high);
    comps.insert("bound_low_entropy".into(), low);
    comps.insert("branch_high".into(), (high < low) as u8 as f64);
    BoundReport::new(avg_score(p), high.min(low), comps)
}

pub fn prop1_branch(p: &ProbVector) -> Prop1Branch {
    let ck = c_k(p.k()).expect("K >= 2");
    let h = entropy(p);
    if ck + 1.0 - h < 1.0 + h {
        Prop1Branch::HighEntropy
    } else {
        Prop1Branch::LowEntropy
    }
}

/// Entropy at which the two per-sample bound expressions meet, located by
/// bisection on their difference over `[0, ln K]`.
pub fn prop1_crossing(k: usize) -> Result<f64> {
    if k < 2 {
        return domain("crossing needs K >= 2");
    }
    let ck = c_k(k)?;
    let gap = |h: f64| (ck + 1.0 - h) - (1.0 + h);
    let (mut lo, mut hi) = (0.0, (k as f64).ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_aps(cfg: &ScoreConfig) -> Result<()> {
    if cfg.kind != ScoreKind::Aps || cfg.randomized {
        return domain("the bounds are stated for the deterministic APS score only");
    }
    Ok(())
}

fn true_scores(d: &Dataset) -> Vec<f64> {
    d.samples().iter().map(|s| aps_scores_all(&s.probs)[s.label]).collect()
}

/// Samples of `cal_set` whose true-label APS score is at least `eta_hat`.
pub fn tail_subset(cal_set: &Dataset, eta_hat: f64, alpha: f64) -> TailSubset {
    let indices = true_scores(cal_set)
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= eta_hat)
        .map(|(i, _)| i)
        .collect();
    TailSubset { indices, eta_hat, alpha }
}

/// `P(failure) <= exp(-2 alpha tau^2 n / (1 - eta)^2)`; reported as 1 at `eta >= 1`.
pub fn prop2_failure_prob(alpha: f64, tau: f64, n: usize, eta_hat: f64) -> f64 {
    if eta_hat >= 1.0 {
        return 1.0;
    }
    (-2.0 * alpha * tau * tau * n as f64 / (1.0 - eta_hat).powi(2)).exp()
}

fn mean_over<F: Fn(usize) -> f64>(idx: &[usize], f: F) -> f64 {
    idx.iter().map(|&i| f(i)).sum::<f64>() / idx.len() as f64
}

fn oracle_of(d: &Dataset) -> Result<&[ProbVector]> {
    d.oracle().ok_or_else(|| crate::Error::Domain("bound check needs oracle distributions".into()))
}

fn pinsker_term(pi: &ProbVector) -> f64 {
    (2.0 * (entropy(pi) + (pi.k() as f64).ln())).sqrt()
}

/// Threshold bound on a calibration set with oracle distributions.
pub fn prop2_check(cal_set: &Dataset, alpha: f64, tau: f64, cfg: &ScoreConfig) -> Result<BoundReport> {
    check_aps(cfg)?;
    if !(tau > 0.0) {
        return domain(format!("tau must be positive, got {tau}"));
    }
    let oracle = oracle_of(cal_set)?;
    let cal = calibrate(&true_scores(cal_set), alpha, *cfg)?;
    let eta = cal.eta_hat;
    let failure = prop2_failure_prob(alpha, tau, cal_set.len(), eta);
    let tail = tail_subset(cal_set, eta, alpha);
    let mut comps = BTreeMap::new();
    comps.insert("eta_hat".into(), eta);
    comps.insert("tau".into(), tau);
    comps.insert("failure_prob".into(), failure);
    comps.insert("tail_size".into(), tail.indices.len() as f64);
    if tail.indices.is_empty() || !eta.is_finite() {
        let mut r = BoundReport::new(eta, f64::INFINITY, comps);
        r.skipped = true;
        return Ok(r);
    }
    let samples = cal_set.samples();
    let mean_avg = mean_over(&tail.indices, |i| avg_score(&samples[i].probs));
    let c_pi_k = mean_over(&tail.indices, |i| pinsker_term(&oracle[i]));
    comps.insert("mean_avg_score_tail".into(), mean_avg);
    comps.insert("C_pi_K".into(), c_pi_k);
    let mut r = BoundReport::new(eta, mean_avg + c_pi_k + tau, comps);
    r.skipped = eta >= 1.0;
    Ok(r)
}

/// Inputs of the explicit set-size bound, kept separate so the right-hand
/// side can be re-evaluated with any one of them varied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thm2Terms {
    pub alpha: f64,
    pub k: usize,
    pub c_k: f64,
    pub mu: f64,
    pub mean_entropy_tail: f64,
    /// `E[sqrt(2 (H(pi) + ln K)) | tail] + tau + 1`.
    pub c_const: f64,
}

impl Thm2Terms {
    pub fn rhs(&self) -> f64 {
        let a = 1.0 - self.alpha;
        let kf = self.k as f64;
        a * (1.0 - 2.0 * self.mu) * self.mean_entropy_tail
            + a * (self.mu * self.c_k - (kf + 1.0) / (2.0 * kf))
            + a * (1.0 - 2.0 * self.mu)
            + self.c_const
    }
}

/// Expected-size bound: test sets built at `cal.eta_hat`, tail statistics
/// from `cal_set` (which must carry oracle distributions).
pub fn thm2_check(
    cal_set: &Dataset,
    test_set: &Dataset,
    cal: &CalibrationResult,
    alpha: f64,
    tau: f64,
) -> Result<BoundReport> {
    check_aps(&cal.score_cfg)?;
    if cal_set.k() != test_set.k() {
        return domain("calibration and test sets differ in K");
    }
    if test_set.is_empty() {
        return domain("empty test set");
    }
    let oracle = oracle_of(cal_set)?;
    let tail = tail_subset(cal_set, cal.eta_hat, alpha);
    if tail.indices.is_empty() {
        return domain("tail subset is empty");
    }
    let k = cal_set.k();
    let ck = c_k(k)?;
    let samples = cal_set.samples();
    let mu = mean_over(&tail.indices, |i| (entropy(&samples[i].probs) >= 0.5 * ck) as u8 as f64);
    let mean_h = mean_over(&tail.indices, |i| entropy(&samples[i].probs));
    let c_pi_k = mean_over(&tail.indices, |i| pinsker_term(&oracle[i]));
    let terms = Thm2Terms { alpha, k, c_k: ck, mu, mean_entropy_tail: mean_h, c_const: c_pi_k + tau + 1.0 };

    let mut size = 0usize;
    for p in test_set.probs() {
        size += predict_set(p, cal)?.size();
    }
    let lhs = size as f64 / test_set.len() as f64 / k as f64;

    let mut comps = BTreeMap::new();
    comps.insert("eta_hat".into(), cal.eta_hat);
    comps.insert("C_K".into(), ck);
    comps.insert("mu".into(), mu);
    comps.insert("mean_entropy_tail".into(), mean_h);
    comps.insert("C".into(), terms.c_const);
    comps.insert("tau".into(), tau);
    comps.insert("tail_size".into(), tail.indices.len() as f64);
    comps.insert("failure_prob".into(), prop2_failure_prob(alpha, tau, cal.n_cal, cal.eta_hat));
    Ok(BoundReport::new(lhs, terms.rhs(), comps))
}
