//! Probability vectors on the K-simplex and the numerics built on them.
//!
//! All logarithms are natural, so entropies are in nats. `0 ln 0` is taken
//! as `0`, which makes one-hot vectors legal inputs everywhere.
//!
//! Construction policy:
//! - [`ProbVector::new`] accepts vectors summing to one within [`SIMPLEX_TOL`].
//! - [`ProbVector::normalized`] additionally renormalizes vectors whose sum is
//!   off by at most [`RENORM_TOL`] (typical of exported `float32` rows).
//!
//! Sorting is always descending with ties broken by ascending class index, so
//! repeated runs are bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Accepted deviation of the entry sum from one without renormalization.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Largest sum deviation that is repaired by dividing through by the sum.
pub const RENORM_TOL: f64 = 1e-6;

/// Lower clamp applied to probabilities before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// A categorical distribution over `K >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates `probs` as a simplex point without modifying it.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum = check_entries(&probs)?;
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return domain(format!("probabilities sum to {sum}, not 1"));
        }
        Ok(Self(probs))
    }

    /// Like [`ProbVector::new`], but rows whose sum deviates from one by at
    /// most [`RENORM_TOL`] are divided by their sum.
    pub fn normalized(mut probs: Vec<f64>) -> Result<Self> {
        let sum = check_entries(&probs)?;
        let dev = (sum - 1.0).abs();
        if dev > RENORM_TOL {
            return domain(format!("probabilities sum to {sum}, deviation exceeds {RENORM_TOL}"));
        }
        if dev > 0.0 {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(Self(probs))
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return domain("a distribution needs at least 2 classes");
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    /// Point mass on class `y`.
    pub fn one_hot(k: usize, y: usize) -> Result<Self> {
        if k < 2 || y >= k {
            return domain(format!("one-hot index {y} invalid for K={k}"));
        }
        let mut v = vec![0.0; k];
        v[y] = 1.0;
        Ok(Self(v))
    }

    /// Builds from positive weights that are normalized here. Used for
    /// outputs of exponentiation where the sum is known to be positive.
    pub(crate) fn from_weights(mut w: Vec<f64>) -> Self {
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= sum);
        Self(w)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Natural-log lift to logits with [`LOG_CLAMP`] clamping.
    pub fn log_probs(&self) -> LogitVector {
        LogitVector(self.0.iter().map(|&p| p.max(LOG_CLAMP).ln()).collect())
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = crate::Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_entries(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return domain(format!("need K >= 2 classes, got {}", probs.len()));
    }
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return domain(format!("entry {i} = {p} is not a probability"));
        }
    }
    Ok(probs.iter().sum())
}

/// Unnormalized real scores over `K >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.len() < 2 {
            return domain(format!("need K >= 2 logits, got {}", logits.len()));
        }
        if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
            return domain(format!("logit {i} is not finite"));
        }
        Ok(Self(logits))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy in nats.
pub fn entropy(p: &ProbVector) -> f64 {
    entropy_raw(p.as_slice())
}

pub(crate) fn entropy_raw(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Softmax of `z / t`, stabilized by subtracting the max logit.
pub fn softmax_with_temperature(z: &LogitVector, t: f64) -> Result<ProbVector> {
    if !(t > 0.0) || !t.is_finite() {
        return domain(format!("temperature must be positive and finite, got {t}"));
    }
    Ok(ProbVector::from_weights(softmax_weights(z.as_slice(), t)))
}

/// Unnormalized `exp((z - max z) / t)`; the max entry is exactly 1.
pub(crate) fn softmax_weights(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    z.iter().map(|&x| ((x - m) / t).exp()).collect()
}

/// A probability vector sorted in descending order with rank bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedProbs {
    /// Probabilities in descending order.
    pub sorted: Vec<f64>,
    /// `order[r]` is the class at 0-based rank `r`.
    pub order: Vec<usize>,
    /// `rank[c]` is the 0-based rank of class `c`; inverse of `order`.
    pub rank: Vec<usize>,
}

impl SortedProbs {
    /// Inclusive prefix sums of `sorted`: entry `r` is the mass of ranks `0..=r`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.sorted
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect()
    }
}

/// Stable descending sort; ties keep ascending class order.
pub fn sort_desc(p: &ProbVector) -> SortedProbs {
    sort_desc_raw(p.as_slice())
}

pub(crate) fn sort_desc_raw(p: &[f64]) -> SortedProbs {
    let mut order: Vec<usize> = (0..p.len()).collect();
    // sort_by is stable, so equal entries stay in index order
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    let mut rank = vec![0; p.len()];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    SortedProbs {
        sorted: order.iter().map(|&c| p[c]).collect(),
        order,
        rank,
    }
}

/// One labelled observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub probs: ProbVector,
    pub label: usize,
}

impl LabeledSample {
    pub fn new(probs: ProbVector, label: usize) -> Result<Self> {
        if label >= probs.k() {
            return domain(format!("label {label} out of range for K={}", probs.k()));
        }
        Ok(Self { probs, label })
    }
}

/// Labelled probability vectors sharing a class count, optionally paired with
/// the oracle conditional distribution of each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    k: usize,
    samples: Vec<LabeledSample>,
    oracle: Option<Vec<ProbVector>>,
}

impl Dataset {
    pub fn new(k: usize, samples: Vec<LabeledSample>, oracle: Option<Vec<ProbVector>>) -> Result<Self> {
        if k < 2 {
            return domain("dataset needs K >= 2");
        }
        if let Some(i) = samples.iter().position(|s| s.probs.k() != k) {
            return domain(format!("sample {i} has K={}, expected {k}", samples[i].probs.k()));
        }
        if let Some(o) = &oracle {
            if o.len() != samples.len() {
                return domain(format!("oracle has {} rows, samples {}", o.len(), samples.len()));
            }
            if let Some(i) = o.iter().position(|p| p.k() != k) {
                return domain(format!("oracle row {i} has wrong K"));
            }
        }
        Ok(Self { k, samples, oracle })
    }

    /// Builds from parallel probability rows and labels.
    pub fn from_parts(probs: Vec<ProbVector>, labels: Vec<usize>, oracle: Option<Vec<ProbVector>>) -> Result<Self> {
        if probs.len() != labels.len() {
            return domain(format!("{} probability rows but {} labels", probs.len(), labels.len()));
        }
        let k = probs.first().map(ProbVector::k).ok_or_else(|| crate::Error::Domain("empty dataset".into()))?;
        let samples = probs
            .into_iter()
            .zip(labels)
            .map(|(p, y)| LabeledSample::new(p, y))
            .collect::<Result<Vec<_>>>()?;
        Self::new(k, samples, oracle)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn oracle(&self) -> Option<&[ProbVector]> {
        self.oracle.as_deref()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn probs(&self) -> impl Iterator<Item = &ProbVector> {
        self.samples.iter().map(|s| &s.probs)
    }

    /// New dataset made of the samples at `idx` (in that order).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            k: self.k,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            oracle: self.oracle.as_ref().map(|o| idx.iter().map(|&i| o[i].clone()).collect()),
        }
    }

    /// Concatenation of two datasets with the same K. The oracle is kept only
    /// when both sides carry one.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.k != other.k {
            return domain(format!("cannot concatenate K={} with K={}", self.k, other.k));
        }
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        let oracle = match (&self.oracle, &other.oracle) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        Ok(Dataset { k: self.k, samples, oracle })
    }

    /// Same labels and oracle, probabilities replaced by `f(p)`.
    pub fn map_probs<F>(&self, f: F) -> Result<Dataset>
    where
        F: Fn(&ProbVector) -> Result<ProbVector>,
    {
        let samples = self
            .samples
            .iter()
            .map(|s| Ok(LabeledSample { probs: f(&s.probs)?, label: s.label }))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.k, samples, self.oracle.clone())
    }
}
