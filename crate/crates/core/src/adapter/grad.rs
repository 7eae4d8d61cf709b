//! Reverse-mode gradients of the batch objective with respect to every
//! adapter parameter.

use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::prob::LabeledSample;

use super::loss::{batch_loss_with_grad, LossBreakdown};
use super::{AdapterParams, Trace, TrainConfig};

/// Gradient buffers laid out like [`AdapterParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &AdapterParams) -> Self {
        Self {
            weights: params.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().chain(self.biases.iter_mut()).zip(other.weights.iter().chain(&other.biases)) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.weights.iter().chain(&self.biases).flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_batch(batch: &[LabeledSample], params: &AdapterParams) -> Result<()> {
    let k = params.k();
    if let Some(s) = batch.iter().find(|s| s.probs.k() != k) {
        return domain(format!("adapter expects K={k}, batch sample has K={}", s.probs.k()));
    }
    Ok(())
}

/// Objective value on a batch of base samples.
pub fn total_loss(batch: &[LabeledSample], params: &AdapterParams, cfg: &TrainConfig) -> Result<LossBreakdown> {
    check_batch(batch, params)?;
    let probs: Vec<Vec<f64>> = batch.par_iter().map(|s| params.trace(s.probs.as_slice()).probs).collect();
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    Ok(batch_loss_with_grad(&probs, &labels, cfg)?.0)
}

/// Objective value and its exact gradient. Per-sample contributions are
/// summed in batch order, so results do not depend on thread scheduling.
pub fn backward(batch: &[LabeledSample], params: &AdapterParams, cfg: &TrainConfig) -> Result<(LossBreakdown, Gradients)> {
    check_batch(batch, params)?;
    let traces: Vec<Trace> = batch.par_iter().map(|s| params.trace(s.probs.as_slice())).collect();
    let probs: Vec<Vec<f64>> = traces.iter().map(|t| t.probs.clone()).collect();
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let (breakdown, d_probs) = batch_loss_with_grad(&probs, &labels, cfg)?;
    if !breakdown.total.is_finite() {
        return domain(format!("non-finite loss {breakdown:?}"));
    }
    let per_sample: Vec<Gradients> =
        traces.par_iter().zip(&d_probs).map(|(t, g)| sample_backward(params, t, g)).collect();
    let mut grads = Gradients::zeros_like(params);
    per_sample.iter().for_each(|g| grads.add(g));
    Ok((breakdown, grads))
}

fn sample_backward(params: &AdapterParams, trace: &Trace, d_probs: &[f64]) -> Gradients {
    let p = &trace.probs;
    let dot: f64 = p.iter().zip(d_probs).map(|(a, b)| a * b).sum();
    let mut delta: Vec<f64> = p.iter().zip(d_probs).map(|(pj, gj)| pj * (gj - dot)).collect();
    let mut out = Gradients::zeros_like(params);
    for (l, layer) in params.layers.iter().enumerate().rev() {
        let x = &trace.acts[l];
        for (o, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                let row = &mut out.weights[l][o * layer.n_in..(o + 1) * layer.n_in];
                row.iter_mut().zip(x).for_each(|(w, xi)| *w += d * xi);
            }
        }
        out.biases[l].copy_from_slice(&delta);
        if l > 0 {
            let mut prev = vec![0.0; layer.n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    prev.iter_mut().zip(row).for_each(|(v, w)| *v += d * w);
                }
            }
            // ReLU gate: acts[l] holds the post-activation of layer l - 1
            prev.iter_mut().zip(x).for_each(|(v, a)| {
                if *a <= 0.0 {
                    *v = 0.0
                }
            });
            delta = prev;
        }
    }
    out
}
