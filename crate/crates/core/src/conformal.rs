//! Split-conformal calibration and prediction-set construction.
//!
//! The threshold is the `ceil((1 - alpha)(n + 1))`-th smallest calibration
//! score, or `+inf` when that index exceeds `n`. A class joins the set of a
//! test point when its score is at most the threshold; empty sets are legal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::prob::{Dataset, ProbVector};
use crate::scores::{ScoreConfig, ScoreKey};

/// Outcome of calibrating a threshold on held-out scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// `+inf` serializes as `null`.
    #[serde(with = "inf_as_null")]
    pub eta_hat: f64,
    pub alpha: f64,
    pub n_cal: usize,
    pub score_cfg: ScoreConfig,
    /// Class count the threshold was calibrated for, when known.
    pub n_classes: Option<usize>,
    /// Exact threshold when calibrated from [`ScoreKey`]s; set membership
    /// then compares keys instead of rounded values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<ScoreKey>,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Classes admitted for one test point, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub members: Vec<usize>,
}

impl PredictionSet {
    pub fn full(k: usize) -> Self {
        Self { members: (0..k).collect() }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, y: usize) -> bool {
        self.members.binary_search(&y).is_ok()
    }

    pub fn is_subset(&self, other: &PredictionSet) -> bool {
        self.members.iter().all(|&c| other.contains(c))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    Ok(())
}

/// 1-based order-statistic index `ceil((1 - alpha)(n + 1))`.
///
/// A product within relative `1e-12` of an integer is treated as that integer
/// so that e.g. `0.9 * 100` gives 90 regardless of rounding in `1 - alpha`.
pub fn quantile_index(n: usize, alpha: f64) -> usize {
    let x = (1.0 - alpha) * (n as f64 + 1.0);
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-12 * x.max(1.0) { nearest } else { x.ceil() };
    (k as usize).max(1)
}

/// Finite-sample conformal quantile of `scores`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return domain("cannot calibrate on an empty score set");
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return domain(format!("calibration score {i} is not finite"));
    }
    let k = quantile_index(scores.len(), alpha);
    if k > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut buf = scores.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Calibrates a threshold from true-label scores.
pub fn calibrate(scores: &[f64], alpha: f64, score_cfg: ScoreConfig) -> Result<CalibrationResult> {
    let eta_hat = conformal_quantile(scores, alpha)?;
    Ok(CalibrationResult { eta_hat, alpha, n_cal: scores.len(), score_cfg, n_classes: None, key: None })
}

/// [`calibrate`] on exact-order keys. `eta_hat` is the selected key's value.
pub fn calibrate_keys(keys: &[ScoreKey], alpha: f64, score_cfg: ScoreConfig) -> Result<CalibrationResult> {
    check_alpha(alpha)?;
    if keys.is_empty() {
        return domain("cannot calibrate on an empty score set");
    }
    if let Some(i) = keys.iter().position(|k| !k.value().is_finite()) {
        return domain(format!("calibration score {i} is not finite"));
    }
    let n = keys.len();
    let idx = quantile_index(n, alpha);
    let key = (idx <= n).then(|| {
        let mut buf = keys.to_vec();
        *buf.select_nth_unstable_by(idx - 1, ScoreKey::total_cmp).1
    });
    Ok(CalibrationResult {
        eta_hat: key.map_or(f64::INFINITY, |k| k.value()),
        alpha,
        n_cal: n,
        score_cfg,
        n_classes: None,
        key,
    })
}

/// Set of classes whose score is at most the calibrated threshold.
pub fn predict_set(p: &ProbVector, cal: &CalibrationResult) -> Result<PredictionSet> {
    predict_set_with(p, cal, 0.0)
}

/// As [`predict_set`] with an explicit smoothing draw `u` for randomized scores.
pub fn predict_set_with(p: &ProbVector, cal: &CalibrationResult, u: f64) -> Result<PredictionSet> {
    if let Some(k) = cal.n_classes {
        if k != p.k() {
            return domain(format!("calibrated for K={k}, got a vector with K={}", p.k()));
        }
    }
    cal.score_cfg.validate(p.k())?;
    if cal.eta_hat == f64::INFINITY {
        return Ok(PredictionSet::full(p.k()));
    }
    let members = match &cal.key {
        Some(t) => cal
            .score_cfg
            .keys_all(p, u)
            .iter()
            .enumerate()
            .filter(|(_, k)| k.total_cmp(t).is_le())
            .map(|(c, _)| c)
            .collect(),
        None => cal
            .score_cfg
            .scores_all(p, u)
            .iter()
            .enumerate()
            .filter(|(_, &s)| s <= cal.eta_hat)
            .map(|(c, _)| c)
            .collect(),
    };
    Ok(PredictionSet { members })
}

/// Block proportions for the train/valid/cal/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub [f64; 4]);

impl Default for SplitRatios {
    fn default() -> Self {
        Self([2.0, 1.0, 4.0, 3.0])
    }
}

impl SplitRatios {
    /// Block sizes for `n` samples: each block is floored, the remainder goes to test.
    pub fn sizes(&self, n: usize) -> Result<[usize; 4]> {
        if let Some(r) = self.0.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return domain(format!("split ratios must be positive, got {r}"));
        }
        let total: f64 = self.0.iter().sum();
        let mut sizes = [0usize; 4];
        for i in 0..3 {
            sizes[i] = ((n as f64 * self.0[i]) / total + 1e-9).floor() as usize;
        }
        sizes[3] = n - sizes[..3].iter().sum::<usize>();
        Ok(sizes)
    }
}

/// Four disjoint blocks of a dataset.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Dataset,
    pub valid: Dataset,
    pub cal: Dataset,
    pub test: Dataset,
}

/// Seeded permutation of `0..n` cut into blocks per `ratios`.
pub fn split_indices(n: usize, ratios: SplitRatios, seed: u64) -> Result<[Vec<usize>; 4]> {
    if n < 4 {
        return domain(format!("need at least 4 samples to split, got {n}"));
    }
    let sizes = ratios.sizes(n)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out: [Vec<usize>; 4] = Default::default();
    let mut at = 0;
    for (block, &len) in out.iter_mut().zip(&sizes) {
        *block = perm[at..at + len].to_vec();
        at += len;
    }
    Ok(out)
}

pub fn split_dataset(d: &Dataset, ratios: SplitRatios, seed: u64) -> Result<DataSplits> {
    let [tr, va, ca, te] = split_indices(d.len(), ratios, seed)?;
    Ok(DataSplits { train: d.subset(&tr), valid: d.subset(&va), cal: d.subset(&ca), test: d.subset(&te) })
}

/// Seeded cal/test re-split of a pool: the first `n_cal` permuted samples
/// calibrate, the rest test.
pub fn resplit(pool: &Dataset, n_cal: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_cal == 0 || n_cal >= pool.len() {
        return domain(format!("n_cal={n_cal} must be in [1, {})", pool.len()));
    }
    let mut perm: Vec<usize> = (0..pool.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((pool.subset(&perm[..n_cal]), pool.subset(&perm[n_cal..])))
}

/// True-label keys of a dataset; `u` draws come from `rng` only when the
/// config is randomized.
fn true_label_keys(d: &Dataset, cfg: &ScoreConfig, rng: &mut ChaCha8Rng) -> Vec<ScoreKey> {
    d.samples()
        .iter()
        .map(|s| {
            let u = if cfg.randomized { rng.random::<f64>() } else { 0.0 };
            cfg.keys_all(&s.probs, u)[s.label]
        })
        .collect()
}

/// Calibrate on `cal_set`, then build one prediction set per test sample.
pub fn run_cp(
    cal_set: &Dataset,
    test_set: &Dataset,
    alpha: f64,
    cfg: ScoreConfig,
) -> Result<(CalibrationResult, Vec<PredictionSet>)> {
    run_cp_seeded(cal_set, test_set, alpha, cfg, 0)
}

/// [`run_cp`] with an explicit seed for randomized-score draws.
pub fn run_cp_seeded(
    cal_set: &Dataset,
    test_set: &Dataset,
    alpha: f64,
    cfg: ScoreConfig,
    seed: u64,
) -> Result<(CalibrationResult, Vec<PredictionSet>)> {
    if cal_set.k() != test_set.k() {
        return domain(format!("calibration K={} but test K={}", cal_set.k(), test_set.k()));
    }
    cfg.validate(cal_set.k())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = true_label_keys(cal_set, &cfg, &mut rng);
    let mut cal = calibrate_keys(&keys, alpha, cfg)?;
    cal.n_classes = Some(cal_set.k());
    let sets = test_set
        .probs()
        .map(|p| {
            let u = if cfg.randomized { rng.random::<f64>() } else { 0.0 };
            predict_set_with(p, &cal, u)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((cal, sets))
}
