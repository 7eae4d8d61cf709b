//! Train a small correction adapter and compare sets before and after.
//!
//! `cargo run --release --example train_adapter`

use ec3::adapter::{train, write_adapter, TrainConfig};
use ec3::conformal::{run_cp, split_dataset, SplitRatios};
use ec3::scores::ScoreConfig;
use ec3::synth::{generate, SynthConfig};

fn summary(sets: &[ec3::conformal::PredictionSet], labels: &[usize]) -> (f64, f64) {
    let n = sets.len() as f64;
    let cov = sets.iter().zip(labels).filter(|(s, &y)| s.contains(y)).count() as f64 / n;
    let size = sets.iter().map(|s| s.size() as f64).sum::<f64>() / n;
    (cov, size)
}

fn main() -> ec3::Result<()> {
    let data = generate(&SynthConfig { n: 10_000, seed: 2, ..Default::default() })?;
    let splits = split_dataset(&data, SplitRatios::default(), 2)?;
    let alpha = 0.1;

    let (_, before) = run_cp(&splits.cal, &splits.test, alpha, ScoreConfig::aps())?;

    let cfg = TrainConfig { epochs: 20, hidden: vec![32], seed: 2, ..Default::default() };
    let out = train(&splits.train, &splits.valid, &cfg)?;
    for h in out.history.iter().step_by(5) {
        println!(
            "epoch {:3}  loss {:.4} (focal {:.4}, ineff {:.4})  valid coverage {:.3} size {:.3}",
            h.epoch, h.loss.total, h.loss.focal, h.loss.ineff, h.valid.coverage, h.valid.efficiency
        );
    }
    println!("selected epoch {:?}, {} parameters", out.selected_epoch, out.params.n_params());

    let cal = out.params.correct(&splits.cal)?;
    let test = out.params.correct(&splits.test)?;
    let (_, after) = run_cp(&cal, &test, alpha, ScoreConfig::aps())?;

    let labels = splits.test.labels();
    let (c0, s0) = summary(&before, &labels);
    let (c1, s1) = summary(&after, &labels);
    println!("base:      coverage {c0:.4}, mean size {s0:.3}");
    println!("corrected: coverage {c1:.4}, mean size {s1:.3}");

    let mut buf = Vec::new();
    write_adapter(&out.params, &mut buf)?;
    println!("serialized adapter: {} bytes", buf.len());
    Ok(())
}
