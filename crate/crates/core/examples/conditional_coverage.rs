//! Per-class coverage on a class-imbalanced problem, with and without the
//! conditional coverage term in training.
//!
//! `cargo run --release --example conditional_coverage`

use ec3::adapter::{train, TrainConfig};
use ec3::conformal::{run_cp, split_dataset, SplitRatios};
use ec3::metrics::class_coverage;
use ec3::scores::ScoreConfig;
use ec3::synth::{imbalanced_variant, SynthConfig};

fn main() -> ec3::Result<()> {
    let data = imbalanced_variant(&SynthConfig { n: 20_000, seed: 8, ..SynthConfig::imbalanced() })?;
    let splits = split_dataset(&data, SplitRatios::default(), 8)?;
    let alpha = 0.1;
    let labels = splits.test.labels();

    let report = |name: &str, cal: &ec3::prob::Dataset, test: &ec3::prob::Dataset| -> ec3::Result<()> {
        let (_, sets) = run_cp(cal, test, alpha, ScoreConfig::aps())?;
        let cc: Vec<f64> = class_coverage(&sets, &labels, test.k())?.into_iter().flatten().collect();
        let min = cc.iter().cloned().fold(f64::INFINITY, f64::min);
        let l1: f64 = cc.iter().map(|c| (c - (1.0 - alpha)).abs()).sum();
        let row: Vec<_> = cc.iter().map(|c| format!("{c:.2}")).collect();
        println!("{name:12} min {min:.3}  L1 gap {l1:.3}  [{}]", row.join(" "));
        Ok(())
    };

    report("base", &splits.cal, &splits.test)?;
    for conditional in [false, true] {
        let cfg = TrainConfig { epochs: 15, conditional, seed: 8, ..Default::default() };
        let out = train(&splits.train, &splits.valid, &cfg)?;
        let name = if conditional { "with cond" } else { "marginal" };
        report(name, &out.params.correct(&splits.cal)?, &out.params.correct(&splits.test)?)?;
    }
    Ok(())
}
