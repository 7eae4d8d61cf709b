//! Finite-difference helpers shared by the gradient and acceptance suites.
#![allow(dead_code)]

use ec3::adapter::{backward, total_loss, AdapterParams, TrainConfig};
use ec3::prob::{LabeledSample, ProbVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn random_rows(k: usize, b: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let rows = (0..b)
        .map(|_| {
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.02..1.0f64).powi(2)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let labels = (0..b).map(|_| rng.random_range(0..k)).collect();
    (rows, labels)
}

/// Rows with every entry of order `1/K` or more, where the truncation error of
/// a `1e-5` central difference stays far below the tolerance.
pub fn interior_rows(k: usize, b: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let rows = (0..b)
        .map(|_| {
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0f64)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let labels = (0..b).map(|_| rng.random_range(0..k)).collect();
    (rows, labels)
}

/// Rows rescaled off the simplex. The losses are defined on raw rows, and
/// distinct row totals keep last-ranked true-label scores from tying at 1,
/// where the quantile is not differentiable.
pub fn off_simplex(rows: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for r in rows {
        let c = rng.random_range(0.8..1.2);
        r.iter_mut().for_each(|v| *v *= c);
    }
}

/// Max relative error of `grad` against central differences of `f` over all row entries.
pub fn check_rows(rows: &[Vec<f64>], grad: &[Vec<f64>], h: f64, f: impl Fn(&[Vec<f64>]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut work = rows.to_vec();
    for i in 0..rows.len() {
        for j in 0..rows[i].len() {
            work[i][j] = rows[i][j] + h;
            let up = f(&work);
            work[i][j] = rows[i][j] - h;
            let down = f(&work);
            work[i][j] = rows[i][j];
            worst = worst.max(rel_err(grad[i][j], (up - down) / (2.0 * h)));
        }
    }
    worst
}

pub fn random_batch(k: usize, b: usize, rng: &mut ChaCha8Rng) -> Vec<LabeledSample> {
    let (rows, labels) = random_rows(k, b, rng);
    to_batch(rows, labels)
}

pub fn to_batch(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Vec<LabeledSample> {
    rows.into_iter()
        .zip(labels)
        .map(|(r, y)| LabeledSample::new(ProbVector::normalized(r).unwrap(), y).unwrap())
        .collect()
}

/// Central differences over every adapter parameter; returns the max relative error.
pub fn param_fd_error(params: &AdapterParams, batch: &[LabeledSample], cfg: &TrainConfig, h: f64) -> f64 {
    let (_, g) = backward(batch, params, cfg).unwrap();
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for l in 0..params.layers.len() {
        for i in 0..params.layers[l].weights.len() + params.layers[l].biases.len() {
            let (orig, analytic) = if i < params.layers[l].weights.len() {
                (params.layers[l].weights[i], g.weights[l][i])
            } else {
                let j = i - params.layers[l].weights.len();
                (params.layers[l].biases[j], g.biases[l][j])
            };
            let set = |w: &mut AdapterParams, v: f64| {
                if i < w.layers[l].weights.len() {
                    w.layers[l].weights[i] = v;
                } else {
                    let j = i - w.layers[l].weights.len();
                    w.layers[l].biases[j] = v;
                }
            };
            set(&mut work, orig + h);
            let up = total_loss(batch, &work, cfg).unwrap().total;
            set(&mut work, orig - h);
            let down = total_loss(batch, &work, cfg).unwrap().total;
            set(&mut work, orig);
            worst = worst.max(rel_err(analytic, (up - down) / (2.0 * h)));
        }
    }
    worst
}

