//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{check_rows, interior_rows, off_simplex, param_fd_error, random_batch, rel_err, to_batch};
use ec3::adapter::loss::{batch_loss_with_grad, cond_with_grad, focal_with_grad, ineff_with_grad};
use ec3::adapter::{loss_ce, loss_focal, smooth_quantile, total_loss, train, AdapterParams, InputMode, TrainConfig};
use ec3::conformal::{calibrate, resplit, run_cp, split_dataset, DataSplits, SplitRatios};
use ec3::harness::commands::{crossing_check, oracle_bound_trials, prop1_fuzz};
use ec3::harness::{self, ExperimentConfig, RunReport};
use ec3::metrics::{class_coverage, coverage, coverage_distance, efficiency, Norm};
use ec3::prob::{Dataset, ProbVector};
use ec3::scores::ScoreConfig;
use ec3::synth::{generate, imbalanced_variant, SynthConfig};
use ec3::tempering::{default_grid, temp_sweep, temper, SweepPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHA: f64 = 0.1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Default benchmark cut 2:1:4:3, so calibration and test hold 4000 and 3000 samples.
fn default_splits(seed: u64) -> DataSplits {
    let d = generate(&SynthConfig { seed, ..Default::default() }).unwrap();
    split_dataset(&d, SplitRatios::default(), seed).unwrap()
}

fn marginal_coverage() -> Outcome {
    let s = default_splits(0);
    let pool = s.cal.concat(&s.test).unwrap();
    let covs: Vec<f64> = (0..100)
        .map(|i| {
            let (c, t) = resplit(&pool, s.cal.len(), i).unwrap();
            let (_, sets) = run_cp(&c, &t, ALPHA, ScoreConfig::aps()).unwrap();
            coverage(&sets, &t.labels()).unwrap()
        })
        .collect();
    let m = mean(&covs);
    outcome((0.89..=0.91).contains(&m), format!("mean coverage {m:.4} over 100 splits (n_cal {}, n_test {})", s.cal.len(), s.test.len()))
}

fn per_sample_bound() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for k in [2, 5, 10, 50, 100] {
        let fuzz = prop1_fuzz(k, 100_000, 0).unwrap();
        let cross = crossing_check(k).unwrap();
        pass &= fuzz.passed && cross.passed;
        lines.push(format!("K={k}: {} violations, min slack {:.3e}", fuzz.trials - fuzz.holds, fuzz.min_slack));
    }
    outcome(pass, lines.join("; "))
}

fn oracle_bounds() -> Outcome {
    let cfg = ExperimentConfig { synth: Some(SynthConfig::default()), ..Default::default() };
    let s = default_splits(cfg.seed);
    let pool = s.cal.concat(&s.test).unwrap();
    let (p2, t2) = oracle_bound_trials(&pool, s.cal.len(), &cfg).unwrap();
    let describe = |b: &harness::BoundSummary| format!("{} {}/{} (need {:.4})", b.check, b.holds, b.trials, b.required_rate);
    outcome(p2.passed && t2.passed, format!("{}; {}", describe(&p2), describe(&t2)))
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_focal: f64 = 0.0;
    for _ in 0..10_000 {
        let k = rng.random_range(2..=20);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(1e-6..1.0)).collect();
        let s: f64 = w.iter().sum();
        let p = ProbVector::normalized(w.into_iter().map(|x| x / s).collect()).unwrap();
        let y = rng.random_range(0..k);
        worst_focal = worst_focal.max((loss_focal(&p, y, 0.0) - loss_ce(&p, y)).abs());
    }
    let cfg = TrainConfig { beta: 0.0, gamma: 0.0, conditional: false, ..Default::default() };
    let mut worst_total: f64 = 0.0;
    for trial in 0..20 {
        let k = rng.random_range(2..=10);
        let batch = random_batch(k, 16, &mut rng);
        let params = AdapterParams::init(k, &[12], InputMode::Probs, trial).unwrap();
        let total = total_loss(&batch, &params, &cfg).unwrap().total;
        let ce = mean(&batch.iter().map(|s| loss_ce(&params.forward(&s.probs).unwrap().1, s.label)).collect::<Vec<_>>());
        worst_total = worst_total.max((total - ce).abs());
    }
    outcome(
        worst_focal < 1e-12 && worst_total < 1e-9,
        format!("focal(0) vs CE max diff {worst_focal:.2e}; total vs mean CE max diff {worst_total:.2e}"),
    )
}

fn gradients() -> Outcome {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for gamma in [0.0, 1.0, 2.0, 4.0] {
        for _ in 0..200 {
            let x = rng.random_range(0.01..0.99);
            let f = |v: f64| focal_with_grad(&[v, 1.0 - x], 0, gamma).0;
            let d = focal_with_grad(&[x, 1.0 - x], 0, gamma).1;
            note("focal", rel_err(d, (f(x + H) - f(x - H)) / (2.0 * H)));
        }
    }
    for _ in 0..200 {
        let m = rng.random_range(2..40);
        let scores: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let level = rng.random_range(0.05..0.99);
        let pos = level * m as f64;
        if (pos - pos.round()).abs() < 1e-3 {
            continue;
        }
        let q = smooth_quantile(&scores, level).unwrap();
        let mut s = scores.clone();
        for i in 0..m {
            s[i] = scores[i] + H;
            let up = smooth_quantile(&s, level).unwrap().value;
            s[i] = scores[i] - H;
            let down = smooth_quantile(&s, level).unwrap().value;
            s[i] = scores[i];
            note("smooth_quantile", rel_err(q.weights[i], (up - down) / (2.0 * H)));
        }
    }
    for trial in 0..20 {
        let k = rng.random_range(3..=10);
        let b = 2 * rng.random_range(4..=8);
        let (mut rows, labels) = interior_rows(k, b, &mut rng);
        off_simplex(&mut rows, &mut rng);
        let cfg = TrainConfig { conditional: trial % 2 == 0, beta: 0.5, ..Default::default() };
        let ineff = ineff_with_grad(&rows, &labels, &cfg).unwrap();
        note("ineff", check_rows(&rows, &ineff.grad, H, |r| ineff_with_grad(r, &labels, &cfg).unwrap().loss));
        let cond = cond_with_grad(&rows, &labels, &cfg).unwrap();
        note("cond", check_rows(&rows, &cond.grad, H, |r| cond_with_grad(r, &labels, &cfg).unwrap().mean_coverage));
        let (_, g) = batch_loss_with_grad(&rows, &labels, &cfg).unwrap();
        note("objective", check_rows(&rows, &g, H, |r| batch_loss_with_grad(r, &labels, &cfg).unwrap().0.total));
    }
    for trial in 0..6u64 {
        let k = rng.random_range(3..=10);
        let input = if trial % 2 == 0 { InputMode::Probs } else { InputMode::LogProbs };
        let params = AdapterParams::init(k, &[12], input, trial).unwrap();
        let (rows, labels) = interior_rows(k, 16, &mut rng);
        let batch = to_batch(rows, labels);
        let cfg = TrainConfig { conditional: trial % 3 == 0, ..Default::default() };
        note("backward", param_fd_error(&params, &batch, &cfg, H));
    }
    let pass = worst.values().all(|&e| e < 1e-4);
    outcome(pass, worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", "))
}

fn temperature_properties() -> Outcome {
    let s = default_splits(0);
    let grid = default_grid();
    let sweep = temp_sweep(&s.cal, &s.test, ALPHA, &grid, ScoreConfig::aps(), 0).unwrap();
    let increasing = sweep.windows(2).all(|w| w[1].mean_entropy > w[0].mean_entropy);
    let argmax_kept = grid
        .iter()
        .all(|&t| s.test.probs().all(|p| temper(p, t).unwrap().argmax() == p.argmax()));
    let half_width = 3.0 * (ALPHA * (1.0 - ALPHA) * (1.0 / s.cal.len() as f64 + 1.0 / s.test.len() as f64)).sqrt();
    let (lo, hi) = sweep.iter().fold((1.0f64, 0.0f64), |(lo, hi), p| (lo.min(p.coverage), hi.max(p.coverage)));
    let in_band = (1.0 - ALPHA - half_width) <= lo && hi <= (1.0 - ALPHA + half_width);
    outcome(
        increasing && argmax_kept && in_band,
        format!(
            "entropy increasing: {increasing}; argmax invariant: {argmax_kept}; coverage in [{lo:.4}, {hi:.4}] vs band 0.9±{half_width:.4}"
        ),
    )
}

/// The efficiency benchmark: 50000 samples, so the adapter sees 10000 training rows.
fn trained_on_benchmark() -> (DataSplits, AdapterParams) {
    let d = generate(&SynthConfig { n: 50_000, ..Default::default() }).unwrap();
    let s = split_dataset(&d, SplitRatios::default(), 0).unwrap();
    let out = train(&s.train, &s.valid, &TrainConfig::default()).unwrap();
    (s, out.params)
}

fn cp_means(pool: &Dataset, n_cal: usize, splits: u64) -> (f64, f64) {
    let (mut cov, mut eff) = (Vec::new(), Vec::new());
    for i in 0..splits {
        let (c, t) = resplit(pool, n_cal, i).unwrap();
        let (_, sets) = run_cp(&c, &t, ALPHA, ScoreConfig::aps()).unwrap();
        cov.push(coverage(&sets, &t.labels()).unwrap());
        eff.push(efficiency(&sets).unwrap());
    }
    (mean(&cov), mean(&eff))
}

fn efficiency_gain() -> Outcome {
    let (s, params) = trained_on_benchmark();
    let pool = s.cal.concat(&s.test).unwrap();
    let (cov_id, eff_id) = cp_means(&pool, s.cal.len(), 100);
    let (cov_tr, eff_tr) = cp_means(&params.correct(&pool).unwrap(), s.cal.len(), 100);
    let gain = 1.0 - eff_tr / eff_id;
    let matched = (0.89..=0.91).contains(&cov_id) && (0.89..=0.91).contains(&cov_tr);
    outcome(
        matched && eff_tr < eff_id && gain >= 0.05,
        format!("identity eff {eff_id:.4} (cov {cov_id:.4}); trained eff {eff_tr:.4} (cov {cov_tr:.4}); gain {:.1}%", 100.0 * gain),
    )
}

/// Baseline points that beat every trained point of their 0.1-nat entropy
/// bin in both coordinates, restricted to the shared entropy range.
fn dominance_violations(trained: &[SweepPoint], base: &[SweepPoint]) -> (usize, usize, Vec<String>) {
    let range = |v: &[SweepPoint]| {
        v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.mean_entropy), hi.max(p.mean_entropy)))
    };
    let ((tl, th), (bl, bh)) = (range(trained), range(base));
    let (lo, hi) = (tl.max(bl), th.min(bh));
    let bin = |h: f64| (h / 0.1).floor() as i64;
    let (mut compared, mut bad) = (0, Vec::new());
    for b in base.iter().filter(|b| (lo..=hi).contains(&b.mean_entropy)) {
        let peers: Vec<_> = trained.iter().filter(|t| bin(t.mean_entropy) == bin(b.mean_entropy)).collect();
        if peers.is_empty() {
            continue;
        }
        compared += 1;
        if peers.iter().all(|t| b.mean_entropy < t.mean_entropy && b.efficiency < t.efficiency) {
            bad.push(format!("H={:.2}/eff={:.3}", b.mean_entropy, b.efficiency));
        }
    }
    (compared, bad.len(), bad)
}

fn pareto_dominance() -> Outcome {
    let (s, params) = trained_on_benchmark();
    let pool = s.cal.concat(&s.test).unwrap();
    let (c, t) = resplit(&pool, s.cal.len(), 0).unwrap();
    let grid = default_grid();
    let base = temp_sweep(&c, &t, ALPHA, &grid, ScoreConfig::aps(), 0).unwrap();
    let trained = temp_sweep(&params.correct(&c).unwrap(), &params.correct(&t).unwrap(), ALPHA, &grid, ScoreConfig::aps(), 0).unwrap();
    let (compared, n_bad, bad) = dominance_violations(&trained, &base);
    outcome(
        n_bad == 0,
        format!("{n_bad} of {compared} comparable baseline points beat the trained curve [{}]", bad.join(" ")),
    )
}

struct ClassStats {
    min: f64,
    l1: f64,
    l2: f64,
}

fn class_stats(pool: &Dataset, n_cal: usize, k: usize) -> ClassStats {
    let splits = 20;
    let mut avg = vec![0.0; k];
    for i in 0..splits {
        let (c, t) = resplit(pool, n_cal, i).unwrap();
        let (_, sets) = run_cp(&c, &t, ALPHA, ScoreConfig::aps()).unwrap();
        for (a, cc) in avg.iter_mut().zip(class_coverage(&sets, &t.labels(), k).unwrap()) {
            *a += cc.expect("every class present") / splits as f64;
        }
    }
    let cc: Vec<Option<f64>> = avg.iter().copied().map(Some).collect();
    ClassStats {
        min: avg.iter().copied().fold(f64::INFINITY, f64::min),
        l1: coverage_distance(&cc, 1.0 - ALPHA, Norm::L1).unwrap(),
        l2: coverage_distance(&cc, 1.0 - ALPHA, Norm::L2).unwrap(),
    }
}

fn conditional_coverage() -> Outcome {
    let (mut plain, mut cond) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let d = imbalanced_variant(&SynthConfig { n: 50_000, seed, ..SynthConfig::imbalanced() })
            .unwrap();
        let s = split_dataset(&d, SplitRatios::default(), seed).unwrap();
        let pool = s.cal.concat(&s.test).unwrap();
        for (conditional, acc) in [(false, &mut plain), (true, &mut cond)] {
            let cfg = TrainConfig { seed, conditional, ..Default::default() };
            let params = train(&s.train, &s.valid, &cfg).unwrap().params;
            acc.push(class_stats(&params.correct(&pool).unwrap(), s.cal.len(), 10));
        }
    }
    let avg = |v: &[ClassStats], f: fn(&ClassStats) -> f64| mean(&v.iter().map(f).collect::<Vec<_>>());
    let (min_p, min_c) = (avg(&plain, |c| c.min), avg(&cond, |c| c.min));
    let (l1_p, l1_c) = (avg(&plain, |c| c.l1), avg(&cond, |c| c.l1));
    let (l2_p, l2_c) = (avg(&plain, |c| c.l2), avg(&cond, |c| c.l2));
    let (r1, r2) = (1.0 - l1_c / l1_p, 1.0 - l2_c / l2_p);
    outcome(
        min_c > min_p && r1 >= 0.10 && r2 >= 0.10,
        format!(
            "min class coverage {min_p:.4} -> {min_c:.4}; L1 {l1_p:.4} -> {l1_c:.4} (reduction {:.1}%); L2 {l2_p:.4} -> {l2_c:.4} (reduction {:.1}%)",
            100.0 * r1,
            100.0 * r2
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        files.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
    }
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let base = ExperimentConfig {
        synth: Some(SynthConfig { n: 4000, ..Default::default() }),
        n_conformal_splits: 5,
        train: TrainConfig { epochs: 3, ..Default::default() },
        eval: ec3::metrics::EvalOptions { wsc_directions: 50, ..Default::default() },
        bounds: harness::BoundsConfig { fuzz_samples: 2000, trials: 5, ..Default::default() },
        seed: 11,
        out: out.clone(),
        ..Default::default()
    };
    let commands: [(&str, fn(&ExperimentConfig) -> ec3::Result<RunReport>); 5] = [
        ("evaluate", harness::cmd_evaluate),
        ("train", harness::cmd_train),
        ("sweep", harness::cmd_sweep),
        ("verify-bounds", harness::cmd_verify_bounds),
        ("synth-gen", harness::cmd_synth_gen),
    ];
    let mut differing = Vec::new();
    for (name, cmd) in commands {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let _ = std::fs::remove_dir_all(&out);
            cmd(&base).unwrap().write(&out).unwrap();
            runs.push(snapshot(&out));
        }
        if runs[0] != runs[1] || runs[0].is_empty() {
            differing.push(name);
        }
    }
    outcome(differing.is_empty(), format!("5 commands re-run; differing outputs: {differing:?}"))
}

fn quantile_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    for case in 0..10_000 {
        let n = rng.random_range(1..=1000usize);
        let scores: Vec<f64> = if case % 3 == 0 {
            (0..n).map(|_| rng.random_range(0..20) as f64 / 10.0).collect()
        } else {
            (0..n).map(|_| rng.random::<f64>() * 1.1).collect()
        };
        let a = rng.random_range(1..1000u64);
        let got = calibrate(&scores, a as f64 / 1000.0, ScoreConfig::aps()).unwrap().eta_hat;
        let rank = ((1000 - a) * (n as u64 + 1)).div_ceil(1000) as usize;
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let want = if rank > n { f64::INFINITY } else { sorted[rank - 1] };
        mismatches += (got.to_bits() != want.to_bits()) as usize;
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over 10000 arrays"))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 11] = [
        ("marginal coverage validity", Duration::from_secs(30), marginal_coverage),
        ("per-sample bound fuzz", Duration::from_secs(60), per_sample_bound),
        ("threshold and set-size bounds", Duration::from_secs(300), oracle_bounds),
        ("loss identities", Duration::MAX, loss_identities),
        ("gradient correctness", Duration::MAX, gradients),
        ("temperature scaling properties", Duration::from_secs(60), temperature_properties),
        ("efficiency gain over identity", Duration::from_secs(600), efficiency_gain),
        ("pareto dominance", Duration::from_secs(600), pareto_dominance),
        ("class-conditional coverage", Duration::from_secs(600), conditional_coverage),
        ("determinism", Duration::MAX, determinism),
        ("quantile oracle equivalence", Duration::MAX, quantile_oracle),
    ];
    // optional criterion numbers on the command line restrict the run
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, limit, run)) in criteria.into_iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let took = start.elapsed();
        let pass = o.pass && took <= limit;
        if !pass {
            failed.push(i + 1);
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict} {name} ({:.1}s): {}", i + 1, took.as_secs_f64(), o.detail);
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
