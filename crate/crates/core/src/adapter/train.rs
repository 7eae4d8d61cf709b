//! Mini-batch AdamW training with validation-based checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::run_cp;
use crate::error::{domain, Error, Result};
use crate::metrics::{coverage, efficiency};
use crate::prob::{Dataset, ProbVector};
use crate::scores::ScoreConfig;

use super::grad::{backward, Gradients};
use super::loss::LossBreakdown;
use super::{AdapterParams, TrainConfig};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
/// Allowed validation coverage shortfall below `1 - alpha` for a checkpoint
/// to be eligible.
const COVERAGE_SLACK: f64 = 0.01;

struct AdamW {
    m: Gradients,
    v: Gradients,
    t: i32,
    lr: f64,
    wd: f64,
}

impl AdamW {
    fn new(params: &AdapterParams, lr: f64, wd: f64) -> Self {
        Self { m: Gradients::zeros_like(params), v: Gradients::zeros_like(params), t: 0, lr, wd }
    }

    fn step(&mut self, params: &mut AdapterParams, g: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (l, layer) in params.layers.iter_mut().enumerate() {
            let slots = [
                (&mut layer.weights, &g.weights[l], &mut self.m.weights[l], &mut self.v.weights[l]),
                (&mut layer.biases, &g.biases[l], &mut self.m.biases[l], &mut self.v.biases[l]),
            ];
            for (theta, grad, m, v) in slots {
                for i in 0..theta.len() {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    let update = (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                    theta[i] -= self.lr * (update + self.wd * theta[i]);
                }
            }
        }
    }
}

/// Split-conformal metrics of the corrected validation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidMetrics {
    pub coverage: f64,
    pub efficiency: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-size-weighted mean of the epoch's batch losses.
    pub loss: LossBreakdown,
    pub valid: ValidMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: AdapterParams,
    pub history: Vec<EpochRecord>,
    /// Epoch whose snapshot was returned; `None` when no epoch met the
    /// coverage floor (the final parameters are returned then) or no training ran.
    pub selected_epoch: Option<usize>,
}

/// Corrects `valid`, calibrates on its first half with APS and evaluates on the second.
pub fn validation_metrics(params: &AdapterParams, valid: &Dataset, alpha: f64) -> Result<ValidMetrics> {
    if valid.len() < 2 {
        return domain("validation set needs at least 2 samples");
    }
    let corrected = params.correct(valid)?;
    let half = valid.len() / 2;
    let cal = corrected.subset(&(0..half).collect::<Vec<_>>());
    let test = corrected.subset(&(half..valid.len()).collect::<Vec<_>>());
    let (_, sets) = run_cp(&cal, &test, alpha, ScoreConfig::aps())?;
    Ok(ValidMetrics {
        coverage: coverage(&sets, &test.labels())?,
        efficiency: efficiency(&sets)?,
        mean_entropy: test.probs().map(ProbVector::entropy).sum::<f64>() / test.len() as f64,
    })
}

/// Trains an adapter from a seeded initialization.
pub fn train(train_set: &Dataset, valid_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k = train_set.k();
    if valid_set.k() != k {
        return domain(format!("train K={k} but validation K={}", valid_set.k()));
    }
    if train_set.len() < 4 {
        return domain("training set needs at least 4 samples");
    }
    let mut params = AdapterParams::init_for(k, cfg)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, history: Vec::new(), selected_epoch: None });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = AdamW::new(&params, cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, AdapterParams)> = None;
    let floor = 1.0 - cfg.alpha - COVERAGE_SLACK;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size).filter(|c| c.len() >= 4) {
            let batch: Vec<_> = chunk.iter().map(|&i| train_set.samples()[i].clone()).collect();
            let (lb, g) = backward(&batch, &params, cfg).map_err(|e| Error::Divergence { epoch, detail: e.to_string() })?;
            let w = chunk.len() as f64;
            sum.total += w * lb.total;
            sum.focal += w * lb.focal;
            sum.ineff += w * lb.ineff;
            sum.cond += w * lb.cond;
            sum.entropy_mean += w * lb.entropy_mean;
            seen += chunk.len();
            opt.step(&mut params, &g);
            if params.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases)).any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, detail: "non-finite parameters after update".into() });
            }
        }
        let n = seen as f64;
        let loss = LossBreakdown {
            total: sum.total / n,
            focal: sum.focal / n,
            ineff: sum.ineff / n,
            cond: sum.cond / n,
            entropy_mean: sum.entropy_mean / n,
        };
        let valid = validation_metrics(&params, valid_set, cfg.alpha)
            .map_err(|e| Error::Divergence { epoch, detail: format!("validation: {e}") })?;
        if valid.coverage >= floor && best.as_ref().is_none_or(|(e, _, _)| valid.efficiency < *e) {
            best = Some((valid.efficiency, epoch, params.clone()));
        }
        history.push(EpochRecord { epoch, loss, valid });
    }
    Ok(match best {
        Some((_, epoch, p)) => TrainOutcome { params: p, history, selected_epoch: Some(epoch) },
        None => TrainOutcome { params, history, selected_epoch: None },
    })
}
