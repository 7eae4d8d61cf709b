//! Conformal correction adapter: a small ReLU network that maps frozen base
//! probabilities to corrected ones, trained with focal, smoothed set-size and
//! optional class-coverage losses.
//!
//! Gradients are derived by hand for this fixed graph (MLP, softmax, losses).
//! The base dataset is never modified; the adapter is a pure wrapper.

mod grad;
mod io;
pub mod loss;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::prob::{softmax_weights, Dataset, LogitVector, ProbVector, LOG_CLAMP};

pub use grad::{backward, total_loss, Gradients};
pub use io::{read_adapter, write_adapter, FORMAT_VERSION, MAGIC};
pub use loss::{loss_ce, loss_cond, loss_focal, loss_ineff, smooth_quantile, LossBreakdown, SmoothQuantile};
pub use train::{train, validation_metrics, EpochRecord, TrainOutcome, ValidMetrics};

/// Input-weight scale of the free first-layer units under identity init.
const FRESH_UNIT_SCALE: f64 = 0.1;

/// What the first layer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// The probability vector itself.
    #[default]
    Probs,
    /// `ln max(p, 1e-12)`.
    LogProbs,
}

impl std::str::FromStr for InputMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "probs" => Ok(Self::Probs),
            "log_probs" | "logprobs" | "log-probs" => Ok(Self::LogProbs),
            other => domain(format!("unknown adapter input mode '{other}'")),
        }
    }
}

/// Starting point of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// He-uniform weights everywhere.
    Random,
    /// Reproduces the base distribution exactly (log-probability input only);
    /// see [`AdapterParams::init_identity`].
    #[default]
    Identity,
}

impl std::str::FromStr for InitMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "identity" => Ok(Self::Identity),
            other => domain(format!("unknown adapter init '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    /// Weight of the inefficiency loss.
    pub beta: f64,
    /// Focal exponent; 0 gives cross-entropy.
    pub gamma: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sig_temp: f64,
    pub kappa: f64,
    pub conditional: bool,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub input: InputMode,
    pub init: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            gamma: 4.0,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            epochs: 60,
            batch_size: 512,
            sig_temp: 0.1,
            kappa: 1.0,
            conditional: false,
            seed: 0,
            hidden: vec![128],
            input: InputMode::LogProbs,
            init: InitMode::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return domain(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return domain(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return domain(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.sig_temp > 0.0) || !self.sig_temp.is_finite() {
            return domain(format!("sig_temp must be > 0, got {}", self.sig_temp));
        }
        if !(self.kappa >= 0.0) {
            return domain(format!("kappa must be >= 0, got {}", self.kappa));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return domain("learning rate must be > 0 and weight decay >= 0");
        }
        if self.batch_size < 4 {
            return domain(format!("batch size must be >= 4, got {}", self.batch_size));
        }
        if self.hidden.contains(&0) {
            return domain("hidden layers must be non-empty");
        }
        if self.init == InitMode::Identity && self.input != InputMode::LogProbs {
            return domain("identity initialization needs log-probability input");
        }
        Ok(())
    }
}

/// One affine map `W x + b`, `W` stored row-major as `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, weights: vec![0.0; n_in * n_out], biases: vec![0.0; n_out] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n_in)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Adapter weights. Hidden layers use ReLU; the last layer emits logits.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub input: InputMode,
    pub layers: Vec<Layer>,
}

/// Intermediate values of one forward pass.
pub(crate) struct Trace {
    /// Input of each layer; `acts[0]` is the transformed base vector.
    pub acts: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl AdapterParams {
    /// Random initialization: He-uniform weights, zero biases.
    pub fn init(k: usize, hidden: &[usize], input: InputMode, seed: u64) -> Result<Self> {
        if k < 2 {
            return domain("adapter needs K >= 2");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![k];
        dims.extend_from_slice(hidden);
        dims.push(k);
        let layers = dims
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                let bound = (6.0 / w[0] as f64).sqrt();
                layer.weights.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
                layer
            })
            .collect();
        Self::from_layers(input, layers)
    }

    /// Initialization for `cfg`'s architecture and init mode.
    pub fn init_for(k: usize, cfg: &TrainConfig) -> Result<Self> {
        match cfg.init {
            InitMode::Random => Self::init(k, &cfg.hidden, cfg.input, cfg.seed),
            InitMode::Identity => Self::init_identity(k, &cfg.hidden, cfg.seed),
        }
    }

    /// Log-probability network whose output equals its input distribution.
    ///
    /// Each hidden layer routes `x` through `relu(x)` and `relu(-x)` on its
    /// first `2K` units and the output recombines them as `x = relu(x) - relu(-x)`.
    /// Remaining first-layer units get He-uniform input weights scaled by 0.1
    /// and every unit outside the pass-through pairs has zero outgoing weights,
    /// so they start silent but receive gradient. Every hidden layer needs at
    /// least `2K` units.
    pub fn init_identity(k: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if hidden.is_empty() {
            return Self::identity(k);
        }
        if let Some(h) = hidden.iter().find(|&&h| h < 2 * k) {
            return domain(format!("identity initialization needs hidden widths >= 2K={}, got {h}", 2 * k));
        }
        let mut params = Self::init(k, hidden, InputMode::LogProbs, seed)?;
        let last = params.layers.len() - 1;
        for (l, layer) in params.layers.iter_mut().enumerate() {
            let n_in = layer.n_in;
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
            let mut rows: Vec<&mut [f64]> = layer.weights.chunks_exact_mut(n_in).collect();
            if l == 0 {
                for row in rows.iter_mut().skip(2 * k) {
                    row.iter_mut().for_each(|w| *w *= FRESH_UNIT_SCALE);
                }
                for i in 0..k {
                    rows[i].fill(0.0);
                    rows[i][i] = 1.0;
                    rows[k + i].fill(0.0);
                    rows[k + i][i] = -1.0;
                }
                continue;
            }
            for row in rows.iter_mut() {
                row[2 * k..].fill(0.0);
            }
            if l == last {
                for i in 0..k {
                    rows[i].fill(0.0);
                    rows[i][i] = 1.0;
                    rows[i][k + i] = -1.0;
                }
            } else {
                for (i, row) in rows.iter_mut().take(2 * k).enumerate() {
                    row.fill(0.0);
                    row[i] = 1.0;
                }
            }
        }
        Ok(params)
    }

    /// Single linear layer on log-probabilities with identity weights, so the
    /// corrected distribution equals the base one.
    pub fn identity(k: usize) -> Result<Self> {
        let mut layer = Layer::zeros(k, k);
        (0..k).for_each(|i| layer.weights[i * k + i] = 1.0);
        Self::from_layers(InputMode::LogProbs, vec![layer])
    }

    pub fn from_layers(input: InputMode, layers: Vec<Layer>) -> Result<Self> {
        let p = Self { input, layers };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.layers.first() else {
            return domain("adapter has no layers");
        };
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.n_in * l.n_out || l.biases.len() != l.n_out {
                return domain(format!("layer {i} buffers do not match {}x{}", l.n_out, l.n_in));
            }
            if i > 0 && self.layers[i - 1].n_out != l.n_in {
                return domain(format!("layer {i} expects {} inputs, previous emits {}", l.n_in, self.layers[i - 1].n_out));
            }
            if l.weights.iter().chain(&l.biases).any(|x| !x.is_finite()) {
                return domain(format!("layer {i} has non-finite parameters"));
            }
        }
        let last = self.layers.last().expect("non-empty");
        if first.n_in != last.n_out || first.n_in < 2 {
            return domain(format!("input dim {} must equal output dim {} and be >= 2", first.n_in, last.n_out));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.layers[0].n_in
    }

    /// `[K, hidden..., K]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].n_in).chain(self.layers.iter().map(|l| l.n_out)).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub(crate) fn trace(&self, p: &[f64]) -> Trace {
        let x: Vec<f64> = match self.input {
            InputMode::Probs => p.to_vec(),
            InputMode::LogProbs => p.iter().map(|v| v.max(LOG_CLAMP).ln()).collect(),
        };
        let mut acts = vec![x];
        let last = self.layers.len() - 1;
        let mut logits = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(acts.last().expect("input present"));
            if i == last {
                logits = z;
            } else {
                acts.push(z.into_iter().map(|v| v.max(0.0)).collect());
            }
        }
        let w = softmax_weights(&logits, 1.0);
        let s: f64 = w.iter().sum();
        let probs = w.into_iter().map(|v| v / s).collect();
        Trace { acts, logits, probs }
    }

    /// Corrected logits and probabilities for one base vector.
    pub fn forward(&self, base: &ProbVector) -> Result<(LogitVector, ProbVector)> {
        if base.k() != self.k() {
            return domain(format!("adapter expects K={}, got {}", self.k(), base.k()));
        }
        let t = self.trace(base.as_slice());
        Ok((LogitVector::new(t.logits)?, ProbVector::normalized(t.probs)?))
    }

    /// Applies the adapter to every sample; labels and oracle carry over.
    pub fn correct(&self, d: &Dataset) -> Result<Dataset> {
        d.map_probs(|p| self.forward(p).map(|(_, q)| q))
    }
}
