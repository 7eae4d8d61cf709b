//! The five harness commands. Each returns a [`RunReport`]; writing it is up
//! to the caller (see [`RunReport::write`]).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::adapter::{read_adapter, train, write_adapter, AdapterParams};
use crate::bounds::{c_k, prop1_check, prop1_crossing, prop2_check, thm2_check, BoundReport, HOLD_TOL};
use crate::conformal::{resplit, run_cp_seeded, split_dataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Aggregate};
use crate::prob::{Dataset, ProbVector};
use crate::scores::ScoreKind;
use crate::synth::{generate, imbalanced_variant};
use crate::tempering::{default_grid, pareto_filter, select_by_entropy, temp_sweep};

use super::config::ExperimentConfig;
use super::ingest::{export, ingest};
use super::report::{BoundSummary, RunReport, SplitRecord, TrainRun};

/// Vectors per seeded chunk of the per-sample bound fuzz.
const FUZZ_CHUNK: usize = 4096;

/// Loads the configured data: CSV files or an in-memory synthetic benchmark.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.probs, &cfg.labels, &cfg.synth) {
        (Some(p), Some(l), _) => ingest(p, l, cfg.oracle.as_deref()),
        (_, _, Some(s)) if cfg.imbalanced => imbalanced_variant(s),
        (_, _, Some(s)) => generate(s),
        _ => Err(Error::Config("no data source configured".into())),
    }
}

pub fn load_adapter(path: &Path) -> Result<AdapterParams> {
    read_adapter(BufReader::new(File::open(path)?))
}

/// Data with the configured adapter applied, if any.
fn corrected_input(cfg: &ExperimentConfig) -> Result<Dataset> {
    let data = load_dataset(cfg)?;
    match &cfg.adapter {
        Some(path) => {
            let params = load_adapter(path)?;
            if params.k() != data.k() {
                return Err(Error::Config(format!("adapter has K={} but data has K={}", params.k(), data.k())));
            }
            params.correct(&data)
        }
        None => Ok(data),
    }
}

/// The calibration/test pool and calibration size.
fn cp_pool(cfg: &ExperimentConfig, data: &Dataset) -> Result<(Dataset, usize)> {
    let s = split_dataset(data, cfg.split_ratios, cfg.seed)?;
    Ok((s.cal.concat(&s.test)?, s.cal.len()))
}

/// `n_conformal_splits` re-splits of `pool`, replica `i` seeded with `seed + i`.
pub fn conformal_splits(cfg: &ExperimentConfig, pool: &Dataset, n_cal: usize, repeat: usize) -> Result<Vec<SplitRecord>> {
    (0..cfg.n_conformal_splits)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed + i as u64;
            let (cal_set, test_set) = resplit(pool, n_cal, seed)?;
            let (cal, sets) = run_cp_seeded(&cal_set, &test_set, cfg.alpha, cfg.score, seed)?;
            let features: Vec<ProbVector> = test_set.probs().cloned().collect();
            let report = evaluate(&features, &sets, &test_set.labels(), cfg.alpha, &cfg.eval)?;
            Ok(SplitRecord { repeat, split: i, seed, eta_hat: cal.eta_hat.is_finite().then_some(cal.eta_hat), report })
        })
        .collect()
}

fn aggregate(records: &[SplitRecord]) -> Result<Aggregate> {
    Aggregate::of(&records.iter().map(|r| r.report.clone()).collect::<Vec<_>>())
}

pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<RunReport> {
    let data = corrected_input(cfg)?;
    let (pool, n_cal) = cp_pool(cfg, &data)?;
    let mut report = RunReport::new("evaluate", cfg);
    report.splits = conformal_splits(cfg, &pool, n_cal, 0)?;
    report.aggregate = Some(aggregate(&report.splits)?);
    Ok(report)
}

fn adapter_path(out: &Path, repeat: usize) -> PathBuf {
    match repeat {
        0 => out.join("adapter.ecc3"),
        r => out.join(format!("adapter-{r}.ecc3")),
    }
}

/// Trains `repeats` adapters on the train/valid blocks, writes them to the
/// output directory and evaluates the corrected cal/test pool alongside the
/// uncorrected one.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunReport> {
    let data = load_dataset(cfg)?;
    let blocks = split_dataset(&data, cfg.split_ratios, cfg.seed)?;
    let pool = blocks.cal.concat(&blocks.test)?;
    let n_cal = blocks.cal.len();
    let mut report = RunReport::new("train", cfg);
    if cfg.adapter.is_some() {
        report.warnings.push("`adapter` is ignored by train; adapters are trained from the base data".into());
    }
    std::fs::create_dir_all(&cfg.out)?;
    for repeat in 0..cfg.repeats {
        let tcfg = crate::adapter::TrainConfig { seed: cfg.seed + repeat as u64, ..cfg.train.clone() };
        let outcome = train(&blocks.train, &blocks.valid, &tcfg)?;
        let path = adapter_path(&cfg.out, repeat);
        let mut w = BufWriter::new(File::create(&path)?);
        write_adapter(&outcome.params, &mut w)?;
        std::io::Write::flush(&mut w)?;
        let corrected = outcome.params.correct(&pool)?;
        report.splits.extend(conformal_splits(cfg, &corrected, n_cal, repeat)?);
        report.training.push(TrainRun {
            repeat,
            seed: tcfg.seed,
            adapter_path: path,
            selected_epoch: outcome.selected_epoch,
            history: outcome.history,
        });
    }
    report.aggregate = Some(aggregate(&report.splits)?);
    report.baseline_splits = conformal_splits(cfg, &pool, n_cal, 0)?;
    report.baseline_aggregate = Some(aggregate(&report.baseline_splits)?);
    Ok(report)
}

/// Temperature sweep on the first calibration/test re-split (the one
/// `evaluate` uses as split 0).
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<RunReport> {
    let data = corrected_input(cfg)?;
    let (pool, n_cal) = cp_pool(cfg, &data)?;
    let (cal_set, test_set) = resplit(&pool, n_cal, cfg.seed)?;
    let grid = cfg.grid.clone().unwrap_or_else(default_grid);
    let mut report = RunReport::new("sweep", cfg);
    report.sweep = temp_sweep(&cal_set, &test_set, cfg.alpha, &grid, cfg.score, cfg.seed)?;
    report.pareto = pareto_filter(&report.sweep);
    if let Some(t) = cfg.entropy_threshold {
        report.selection = select_by_entropy(&report.sweep, t);
        if report.selection.is_none() {
            report.warnings.push(format!("no sweep point has mean entropy <= {t}"));
        }
    }
    Ok(report)
}

fn fuzz_vector(k: usize, rng: &mut ChaCha8Rng) -> ProbVector {
    // concentrations spanning 1e-2..10 reach both near-one-hot and near-uniform rows
    let c = 10f64.powf(rng.random_range(-2.0..1.0));
    let g = Gamma::new(c, 1.0).expect("positive shape");
    loop {
        let w: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 && s.is_finite() {
            if let Ok(p) = ProbVector::normalized(w.into_iter().map(|x| x / s).collect()) {
                return p;
            }
        }
    }
}

/// Per-sample bound over `n` random simplex vectors of dimension `k`.
pub fn prop1_fuzz(k: usize, n: usize, seed: u64) -> Result<BoundSummary> {
    let n_chunks = n.div_ceil(FUZZ_CHUNK);
    let per_chunk: Vec<(usize, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((k as u64) << 32) | c as u64);
            let len = FUZZ_CHUNK.min(n - c * FUZZ_CHUNK);
            let mut holds = 0;
            let mut min_slack = f64::INFINITY;
            for _ in 0..len {
                let r = prop1_check(&fuzz_vector(k, &mut rng));
                holds += r.holds as usize;
                min_slack = min_slack.min(r.slack);
            }
            (holds, min_slack)
        })
        .collect();
    let holds = per_chunk.iter().map(|c| c.0).sum();
    let min_slack = per_chunk.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    Ok(BoundSummary {
        check: "per_sample_average_score".into(),
        k,
        trials: n,
        holds,
        min_slack,
        required_rate: 1.0,
        passed: holds == n,
        details: Vec::new(),
    })
}

/// Crossing of the two per-sample bound expressions against `C_K / 2`.
pub fn crossing_check(k: usize) -> Result<BoundSummary> {
    let diff = (prop1_crossing(k)? - c_k(k)? / 2.0).abs();
    let ok = diff <= HOLD_TOL;
    Ok(BoundSummary {
        check: "bound_crossing".into(),
        k,
        trials: 1,
        holds: ok as usize,
        min_slack: HOLD_TOL - diff,
        required_rate: 1.0,
        passed: ok,
        details: Vec::new(),
    })
}

/// Required hold rate for a bound holding with probability `1 - failure`
/// per trial: the expected rate minus a three-sigma binomial margin.
pub fn required_hold_rate(mean_failure: f64, trials: usize) -> f64 {
    let p = (1.0 - mean_failure).clamp(0.0, 1.0);
    p - 3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

fn probabilistic_summary(check: &str, k: usize, details: Vec<BoundReport>) -> BoundSummary {
    let trials = details.len();
    let holds = details.iter().filter(|r| r.holds).count();
    let mean_failure =
        details.iter().map(|r| r.components.get("failure_prob").copied().unwrap_or(1.0)).sum::<f64>() / trials as f64;
    let required = required_hold_rate(mean_failure, trials);
    BoundSummary {
        check: check.into(),
        k,
        trials,
        holds,
        min_slack: details.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min),
        required_rate: required,
        passed: holds as f64 / trials as f64 >= required,
        details,
    }
}

/// Threshold and set-size bounds over `trials` seeded re-splits of an oracle-carrying pool.
pub fn oracle_bound_trials(
    pool: &Dataset,
    n_cal: usize,
    cfg: &ExperimentConfig,
) -> Result<(BoundSummary, BoundSummary)> {
    let tau = cfg.bounds.tau;
    let pairs = (0..cfg.bounds.trials)
        .into_par_iter()
        .map(|t| {
            let seed = cfg.seed + t as u64;
            let (cal_set, test_set) = resplit(pool, n_cal, seed)?;
            let p2 = prop2_check(&cal_set, cfg.alpha, tau, &cfg.score)?;
            let (cal, _) = run_cp_seeded(&cal_set, &test_set, cfg.alpha, cfg.score, seed)?;
            let t2 = thm2_check(&cal_set, &test_set, &cal, cfg.alpha, tau)?;
            Ok((p2, t2))
        })
        .collect::<Result<Vec<_>>>()?;
    let (p2, t2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let k = pool.k();
    Ok((probabilistic_summary("threshold_vs_tail_average", k, p2), probabilistic_summary("expected_set_size", k, t2)))
}

pub fn cmd_verify_bounds(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new("verify-bounds", cfg);
    for &k in &cfg.bounds.fuzz_ks {
        report.bounds.push(prop1_fuzz(k, cfg.bounds.fuzz_samples, cfg.seed)?);
        report.bounds.push(crossing_check(k)?);
    }
    let tight = prop1_check(&ProbVector::one_hot(2, 0)?);
    report.bounds.push(BoundSummary {
        check: "one_hot_tightness".into(),
        k: 2,
        trials: 1,
        holds: tight.holds as usize,
        min_slack: tight.slack,
        required_rate: 1.0,
        passed: tight.holds,
        details: vec![tight],
    });

    let data = load_dataset(cfg)?;
    if data.oracle().is_none() {
        report.warnings.push("no oracle distributions; threshold and set-size bounds skipped".into());
    } else if cfg.score.kind != ScoreKind::Aps || cfg.score.randomized {
        report.warnings.push("threshold and set-size bounds need the deterministic APS score; skipped".into());
    } else {
        let (pool, n_cal) = cp_pool(cfg, &data)?;
        let (p2, t2) = oracle_bound_trials(&pool, n_cal, cfg)?;
        report.bounds.push(p2);
        report.bounds.push(t2);
    }
    Ok(report)
}

/// Writes the configured synthetic benchmark as CSV files into the output directory.
pub fn cmd_synth_gen(cfg: &ExperimentConfig) -> Result<RunReport> {
    if cfg.synth.is_none() {
        return Err(Error::Config("synth-gen needs a [synth] table".into()));
    }
    let data = load_dataset(cfg)?;
    export(&data, &cfg.out)?;
    Ok(RunReport::new("synth-gen", cfg))
}
