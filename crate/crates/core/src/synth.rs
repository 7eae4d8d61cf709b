//! Synthetic benchmarks with known oracle conditional distributions.
//!
//! Each sample draws an oracle `pi ~ Dirichlet(c * K * prior)` (symmetric
//! `Dirichlet(c)` without priors, so the label marginal equals the prior),
//! samples its label from `pi`, and derives the base-model vector by a
//! deterministic distortion of `pi` plus seeded noise. Samples are i.i.d.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::prob::{softmax_weights, Dataset, LabeledSample, ProbVector, LOG_CLAMP, SIMPLEX_TOL};

/// How the base model departs from the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum Distortion {
    None,
    /// Tempered with `T < 1` (overconfident).
    Sharpen(f64),
    /// Tempered with `T > 1` (underconfident).
    Blur(f64),
    /// Gaussian noise of this standard deviation added to the log-oracle.
    LogitNoise(f64),
}

impl Distortion {
    fn validate(&self) -> Result<()> {
        match *self {
            Distortion::None => Ok(()),
            Distortion::Sharpen(t) if t > 0.0 && t < 1.0 => Ok(()),
            Distortion::Blur(t) if t > 1.0 && t.is_finite() => Ok(()),
            Distortion::LogitNoise(s) if s >= 0.0 && s.is_finite() => Ok(()),
            other => domain(format!("invalid distortion {other:?}")),
        }
    }

    fn apply(&self, pi: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        match *self {
            Distortion::None => pi.to_vec(),
            Distortion::Sharpen(t) | Distortion::Blur(t) => {
                let logits: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
                normalize(softmax_weights(&logits, t))
            }
            Distortion::LogitNoise(s) => {
                let logits: Vec<f64> = pi
                    .iter()
                    .map(|p| p.max(LOG_CLAMP).ln() + s * Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect();
                normalize(softmax_weights(&logits, 1.0))
            }
        }
    }
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub k: usize,
    pub n: usize,
    pub concentration: f64,
    pub distortion: Distortion,
    pub class_priors: Option<Vec<f64>>,
    /// Strength of the bias against rare classes in [`imbalanced_variant`]:
    /// the base log-probability of class `k` shifts by `rare_shrink * ln(K prior_k)`
    /// for every class with `prior_k < 1/K`.
    pub rare_shrink: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// The default miscalibrated benchmark: K=10, overconfident base model.
    fn default() -> Self {
        Self {
            k: 10,
            n: 10_000,
            concentration: 0.1,
            distortion: Distortion::Sharpen(0.25),
            class_priors: None,
            rare_shrink: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// The class-imbalanced benchmark: priors `[0.55, 0.05 x 9]` over K=10.
    ///
    /// Concentration 1 keeps the rare-class oracles spread enough that their
    /// uncorrected APS coverage falls below the target; at 0.1 they are nearly
    /// one-hot and end up over-covered instead.
    pub fn imbalanced() -> Self {
        let mut priors = vec![0.05; 10];
        priors[0] = 0.55;
        Self { concentration: 1.0, class_priors: Some(priors), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return domain("synthetic K must be >= 2");
        }
        if self.n < 1 {
            return domain("synthetic n must be >= 1");
        }
        if !(self.concentration > 0.0) || !self.concentration.is_finite() {
            return domain(format!("concentration must be positive, got {}", self.concentration));
        }
        if !(self.rare_shrink >= 0.0) {
            return domain("rare_shrink must be >= 0");
        }
        self.distortion.validate()?;
        if let Some(pr) = &self.class_priors {
            if pr.len() != self.k {
                return domain(format!("{} priors for K={}", pr.len(), self.k));
            }
            if pr.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                return domain("class priors must be strictly positive");
            }
            if (pr.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
                return domain("class priors must sum to 1");
            }
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<f64> {
        match &self.class_priors {
            Some(pr) => pr.iter().map(|p| self.concentration * self.k as f64 * p).collect(),
            None => vec![self.concentration; self.k],
        }
    }
}

fn sample_dirichlet(gammas: &[Gamma<f64>], rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = gammas.iter().map(|d| d.sample(rng)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 && s.is_finite() {
            return g.into_iter().map(|x| x / s).collect();
        }
    }
}

fn sample_label(pi: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the total: take the last class with mass
    pi.iter().rposition(|&p| p > 0.0).unwrap_or(pi.len() - 1)
}

fn build(cfg: &SynthConfig, shift: Option<&[f64]>) -> Result<Dataset> {
    cfg.validate()?;
    let gammas = cfg
        .shapes()
        .into_iter()
        .map(|a| Gamma::new(a, 1.0).map_err(|e| crate::Error::Domain(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n);
    let mut oracle = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let pi = sample_dirichlet(&gammas, &mut rng);
        let y = sample_label(&pi, &mut rng);
        let mut base = cfg.distortion.apply(&pi, &mut rng);
        if let Some(shift) = shift {
            let logits: Vec<f64> = base.iter().zip(shift).map(|(p, s)| p.ln() + s).collect();
            base = normalize(softmax_weights(&logits, 1.0));
        }
        samples.push(LabeledSample::new(ProbVector::normalized(base)?, y)?);
        oracle.push(ProbVector::normalized(pi)?);
    }
    Dataset::new(cfg.k, samples, Some(oracle))
}

/// Draws `cfg.n` i.i.d. samples with the oracle populated.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    build(cfg, None)
}

/// Class-imbalanced benchmark: label marginals follow the priors and the base
/// model additionally under-weights classes rarer than `1/K`.
pub fn imbalanced_variant(cfg: &SynthConfig) -> Result<Dataset> {
    let Some(pr) = &cfg.class_priors else {
        return domain("imbalanced_variant needs class priors");
    };
    let uniform = 1.0 / cfg.k as f64;
    let shift: Vec<f64> = pr
        .iter()
        .map(|&p| if p < uniform - SIMPLEX_TOL { cfg.rare_shrink * (p * cfg.k as f64).ln() } else { 0.0 })
        .collect();
    build(cfg, Some(&shift))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig { n: 50, ..Default::default() };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn no_distortion_means_calibrated_base() {
        let cfg = SynthConfig { n: 30, distortion: Distortion::None, ..Default::default() };
        let d = generate(&cfg).unwrap();
        for (s, o) in d.samples().iter().zip(d.oracle().unwrap()) {
            assert_eq!(&s.probs, o);
        }
    }

    #[test]
    fn sharpening_lowers_entropy() {
        let cfg = SynthConfig { n: 500, ..Default::default() };
        let d = generate(&cfg).unwrap();
        let base: f64 = d.probs().map(ProbVector::entropy).sum();
        let oracle: f64 = d.oracle().unwrap().iter().map(ProbVector::entropy).sum();
        assert!(base < oracle);
    }

    #[test]
    fn invalid_configs() {
        let bad = |c: SynthConfig| generate(&c).is_err();
        assert!(bad(SynthConfig { k: 1, ..Default::default() }));
        assert!(bad(SynthConfig { concentration: 0.0, ..Default::default() }));
        assert!(bad(SynthConfig { distortion: Distortion::Sharpen(2.0), ..Default::default() }));
        assert!(bad(SynthConfig { distortion: Distortion::Blur(0.5), ..Default::default() }));
        assert!(bad(SynthConfig { class_priors: Some(vec![0.5, 0.5]), ..Default::default() }));
        assert!(bad(SynthConfig { class_priors: Some(vec![0.2; 10]), ..Default::default() }));
        assert!(imbalanced_variant(&SynthConfig::default()).is_err());
    }

    #[test]
    fn distortions_stay_on_simplex() {
        for d in [Distortion::Blur(3.0), Distortion::LogitNoise(1.0), Distortion::Sharpen(0.1)] {
            let cfg = SynthConfig { n: 100, distortion: d, concentration: 0.1, ..Default::default() };
            let ds = generate(&cfg).unwrap();
            assert_eq!(ds.len(), 100);
        }
    }

    #[test]
    fn imbalanced_label_counts_follow_priors() {
        let n = 20_000;
        let cfg = SynthConfig { n, ..SynthConfig::imbalanced() };
        let pr = cfg.class_priors.clone().unwrap();
        let d = imbalanced_variant(&cfg).unwrap();
        let mut counts = [0usize; 10];
        for s in d.samples() {
            counts[s.label] += 1;
        }
        for (c, p) in counts.iter().zip(&pr) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 4.0 * sd, "{c} vs {}", n as f64 * p);
        }
    }

    #[test]
    fn uniform_priors_match_plain_generation() {
        let n = 20_000;
        let plain = generate(&SynthConfig { n, ..Default::default() }).unwrap();
        let uni = imbalanced_variant(&SynthConfig { n, class_priors: Some(vec![0.1; 10]), ..Default::default() }).unwrap();
        let mean_h = |d: &Dataset| d.probs().map(ProbVector::entropy).sum::<f64>() / n as f64;
        assert!((mean_h(&plain) - mean_h(&uni)).abs() < 1e-9);
        for (a, b) in plain.samples().iter().zip(uni.samples()) {
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn rare_classes_undercovered_before_correction() {
        use crate::conformal::{resplit, run_cp};
        use crate::metrics::class_coverage;
        use crate::scores::ScoreConfig;
        let cfg = SynthConfig { n: 20_000, ..SynthConfig::imbalanced() };
        let d = imbalanced_variant(&cfg).unwrap();
        let (cal, test) = resplit(&d, 10_000, 0).unwrap();
        let (_, sets) = run_cp(&cal, &test, 0.1, ScoreConfig::aps()).unwrap();
        let cc = class_coverage(&sets, &test.labels(), 10).unwrap();
        let rare = cc[1..].iter().flatten().sum::<f64>() / 9.0;
        assert!(rare < 0.9, "{rare}");
        assert!(cc[1..].iter().flatten().any(|&c| c < 0.9));
    }
}
