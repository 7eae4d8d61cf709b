//! Write a dataset to CSV, read it back and run the evaluate command on it.
//!
//! `cargo run --example csv_pipeline`

use ec3::harness::{cmd_evaluate, export, ingest, ExperimentConfig};
use ec3::metrics::EvalOptions;
use ec3::synth::{generate, SynthConfig};

fn main() -> ec3::Result<()> {
    let dir = std::env::temp_dir().join("ec3-csv-example");
    let data = generate(&SynthConfig { n: 3000, seed: 11, ..Default::default() })?;
    export(&data, &dir)?;

    let back = ingest(&dir.join("probs.csv"), &dir.join("labels.csv"), Some(&dir.join("oracle.csv")))?;
    println!("read {} samples with K={} from {}", back.len(), back.k(), dir.display());

    let cfg = ExperimentConfig {
        synth: None,
        probs: Some(dir.join("probs.csv")),
        labels: Some(dir.join("labels.csv")),
        n_conformal_splits: 5,
        eval: EvalOptions { wsc_directions: 50, ..Default::default() },
        out: dir.join("out"),
        ..Default::default()
    };
    let report = cmd_evaluate(&cfg)?;
    report.write(&cfg.out)?;
    let agg = report.aggregate.expect("at least one split");
    println!("coverage   {:.4} +/- {:.4}", agg.coverage.mean, agg.coverage.std.unwrap_or(0.0));
    println!("efficiency {:.3} +/- {:.3}", agg.efficiency.mean, agg.efficiency.std.unwrap_or(0.0));
    println!("report written to {}", cfg.out.display());
    Ok(())
}
