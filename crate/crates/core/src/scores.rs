//! Non-conformity scores: APS, RAPS, and the average APS score.
//!
//! The APS score of class `y` is the cumulative sorted probability mass
//! through the rank of `y`. RAPS adds `lambda * max(0, rank(y) - k_reg)` with
//! a 1-based rank. Both are deterministic unless `randomized` is set, in
//! which case the mass of `y` itself is scaled by `1 - u` for a uniform `u`.
//!
//! Scores are evaluated as `1 - tail (+ penalty)`, where `tail` is the mass
//! ranked strictly below `y`, summed smallest first. Sharp distributions push
//! many scores within one ulp of 1; [`ScoreKey`] keeps the tail separately so
//! conformal thresholds can still order them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::prob::{sort_desc, ProbVector, SortedProbs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Aps,
    Raps,
}

impl std::str::FromStr for ScoreKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aps" => Ok(ScoreKind::Aps),
            "raps" => Ok(ScoreKind::Raps),
            other => Err(crate::Error::Config(format!("unknown score kind '{other}'"))),
        }
    }
}

/// A score split into its rank penalty and the probability mass it leaves
/// out, `value = 1 - tail + penalty`.
///
/// Ordering compares the rounded value first and the tail second, so scores
/// that round to the same float but differ in tail mass stay distinct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreKey {
    pub penalty: f64,
    pub tail: f64,
}

impl ScoreKey {
    /// Key of a bare score value.
    pub fn from_value(v: f64) -> Self {
        Self { penalty: 0.0, tail: 1.0 - v }
    }

    pub fn value(&self) -> f64 {
        1.0 - self.tail + self.penalty
    }

    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.value().total_cmp(&other.value()).then_with(|| other.tail.total_cmp(&self.tail))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub kind: ScoreKind,
    pub raps_lambda: f64,
    pub raps_kreg: usize,
    pub randomized: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self::aps()
    }
}

impl ScoreConfig {
    pub fn aps() -> Self {
        Self { kind: ScoreKind::Aps, raps_lambda: 0.1, raps_kreg: 1, randomized: false }
    }

    pub fn raps(lambda: f64, kreg: usize) -> Self {
        Self { kind: ScoreKind::Raps, raps_lambda: lambda, raps_kreg: kreg, randomized: false }
    }

    /// Checks the config against a class count.
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.kind == ScoreKind::Raps {
            if !(self.raps_lambda >= 0.0) || !self.raps_lambda.is_finite() {
                return domain(format!("raps_lambda must be >= 0, got {}", self.raps_lambda));
            }
            if self.raps_kreg < 1 || self.raps_kreg > k {
                return domain(format!("raps_kreg must be in [1, {k}], got {}", self.raps_kreg));
            }
        }
        Ok(())
    }

    /// Score of every class. `u` is the smoothing draw in `[0, 1]`, used only
    /// when `randomized` is set.
    pub fn scores_all(&self, p: &ProbVector, u: f64) -> Vec<f64> {
        let sorted = sort_desc(p);
        self.scores_from_sorted(p, &sorted, u)
    }

    pub(crate) fn scores_from_sorted(&self, p: &ProbVector, sorted: &SortedProbs, u: f64) -> Vec<f64> {
        self.keys_from_sorted(p, sorted, u).iter().map(ScoreKey::value).collect()
    }

    /// Exact-order keys of every class; `keys_all(p, u)[c].value()` equals
    /// `scores_all(p, u)[c]` bit for bit.
    pub fn keys_all(&self, p: &ProbVector, u: f64) -> Vec<ScoreKey> {
        self.keys_from_sorted(p, &sort_desc(p), u)
    }

    fn keys_from_sorted(&self, p: &ProbVector, sorted: &SortedProbs, u: f64) -> Vec<ScoreKey> {
        let k = p.k();
        let mut below = vec![0.0; k];
        for r in (0..k.saturating_sub(1)).rev() {
            below[r] = below[r + 1] + sorted.sorted[r + 1];
        }
        (0..k)
            .map(|c| {
                let r = sorted.rank[c];
                let mut tail = below[r];
                if self.randomized {
                    tail += u * p[c];
                }
                let penalty = match self.kind {
                    ScoreKind::Raps => self.raps_lambda * (r + 1).saturating_sub(self.raps_kreg) as f64,
                    ScoreKind::Aps => 0.0,
                };
                ScoreKey { penalty, tail }
            })
            .collect()
    }

    /// Score of a single class.
    pub fn score(&self, p: &ProbVector, y: usize, u: f64) -> Result<f64> {
        check_label(p, y)?;
        Ok(self.scores_all(p, u)[y])
    }
}

fn check_label(p: &ProbVector, y: usize) -> Result<()> {
    if y >= p.k() {
        return domain(format!("class {y} out of range for K={}", p.k()));
    }
    Ok(())
}

/// Deterministic APS score of class `y`.
pub fn aps_score(p: &ProbVector, y: usize) -> Result<f64> {
    check_label(p, y)?;
    Ok(aps_scores_all(p)[y])
}

/// Deterministic APS score of every class, in class-index order.
pub fn aps_scores_all(p: &ProbVector) -> Vec<f64> {
    ScoreConfig::aps().scores_all(p, 0.0)
}

/// RAPS score of class `y` under `cfg` (which must be of kind RAPS).
pub fn raps_score(p: &ProbVector, y: usize, cfg: &ScoreConfig) -> Result<f64> {
    if cfg.kind != ScoreKind::Raps {
        return domain("raps_score called with a non-RAPS config");
    }
    cfg.validate(p.k())?;
    let det = ScoreConfig { randomized: false, ..*cfg };
    det.score(p, y, 0.0)
}

/// Mean APS score over all classes, `sum_k (K - k + 1) / K * p_(k)`.
pub fn avg_score(p: &ProbVector) -> f64 {
    let s = aps_scores_all(p);
    s.iter().sum::<f64>() / s.len() as f64
}
