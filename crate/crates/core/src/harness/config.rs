//! Experiment configuration: a TOML file plus command-line overrides.
//!
//! ```toml
//! probs = "data/probs.csv"
//! labels = "data/labels.csv"
//! alpha = 0.1
//! seed = 7
//! out = "runs/aps"
//!
//! [score]
//! kind = "raps"
//!
//! [train]
//! epochs = 30
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Without `probs`/`labels`, a `[synth]` table generates the data in memory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::TrainConfig;
use crate::conformal::SplitRatios;
use crate::error::{Error, Result};
use crate::metrics::EvalOptions;
use crate::scores::{ScoreConfig, ScoreKind};
use crate::synth::SynthConfig;

/// Settings of the bound checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub tau: f64,
    /// Calibration/test re-splits for the oracle-dependent checks.
    pub trials: usize,
    /// Random simplex vectors per class count for the per-sample bound.
    pub fuzz_samples: usize,
    pub fuzz_ks: Vec<usize>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { tau: 0.05, trials: 200, fuzz_samples: 100_000, fuzz_ks: vec![2, 5, 10, 50, 100] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub probs: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub oracle: Option<PathBuf>,
    /// Generated data, used when no files are given.
    pub synth: Option<SynthConfig>,
    /// Generate with [`crate::synth::imbalanced_variant`] instead of `generate`.
    pub imbalanced: bool,
    /// Adapter applied before evaluation and sweeps.
    pub adapter: Option<PathBuf>,
    pub alpha: f64,
    pub score: ScoreConfig,
    pub split_ratios: SplitRatios,
    pub n_conformal_splits: usize,
    /// Adapter trainings with seeds `seed, seed + 1, ...`.
    pub repeats: usize,
    /// `alpha` and `seed` here are overwritten by the top-level values.
    pub train: TrainConfig,
    /// Sweep temperatures; 40 log-spaced points over `[0.05, 20]` when absent.
    pub grid: Option<Vec<f64>>,
    pub entropy_threshold: Option<f64>,
    pub eval: EvalOptions,
    pub bounds: BoundsConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            probs: None,
            labels: None,
            oracle: None,
            synth: None,
            imbalanced: false,
            adapter: None,
            alpha: 0.1,
            score: ScoreConfig::aps(),
            split_ratios: SplitRatios::default(),
            n_conformal_splits: 100,
            repeats: 1,
            train: TrainConfig::default(),
            grid: None,
            entropy_threshold: None,
            eval: EvalOptions::default(),
            bounds: BoundsConfig::default(),
            seed: 0,
            out: PathBuf::from("ec3-out"),
        }
    }
}

/// Values given on the command line; each replaces the file's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub score: Option<ScoreKind>,
    pub out: Option<PathBuf>,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path`, resolves relative paths against its directory and applies `ov`.
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.probs, &mut self.labels, &mut self.oracle, &mut self.adapter].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.out.is_relative() {
            self.out = base.join(&self.out);
        }
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(a) = ov.alpha {
            self.alpha = a;
        }
        if let Some(b) = ov.beta {
            self.train.beta = b;
        }
        if let Some(g) = ov.gamma {
            self.train.gamma = g;
        }
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(k) = ov.score {
            self.score.kind = k;
        }
        if let Some(o) = &ov.out {
            self.out = o.clone();
        }
        self.train.alpha = self.alpha;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return config_err(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if self.n_conformal_splits < 1 {
            return config_err("n_conformal_splits must be >= 1");
        }
        if self.repeats < 1 {
            return config_err("repeats must be >= 1");
        }
        match (&self.probs, &self.labels, &self.synth) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => {}
            (Some(_), None, _) | (None, Some(_), _) => return config_err("probs and labels must be given together"),
            (Some(_), Some(_), Some(_)) => return config_err("give either data files or [synth], not both"),
            (None, None, None) => return config_err("no data: set probs/labels or a [synth] table"),
        }
        if self.oracle.is_some() && self.probs.is_none() {
            return config_err("oracle needs probs and labels");
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(s) = &self.synth {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
            if self.imbalanced && s.class_priors.is_none() {
                return config_err("imbalanced generation needs synth.class_priors");
            }
        }
        if let Some(t) = self.entropy_threshold {
            if !(t >= 0.0) {
                return config_err(format!("entropy_threshold must be >= 0, got {t}"));
            }
        }
        if self.bounds.trials < 1 || !(self.bounds.tau > 0.0) {
            return config_err("bounds.trials must be >= 1 and bounds.tau > 0");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
