//! Coverage diagnostics beyond the marginal rate.
//!
//! `cargo run --example metrics`

use ec3::conformal::{resplit, run_cp};
use ec3::metrics::{class_coverage, default_sscv_bins, sscv, wsc};
use ec3::scores::ScoreConfig;
use ec3::synth::{generate, SynthConfig};

fn main() -> ec3::Result<()> {
    let data = generate(&SynthConfig { n: 5000, seed: 9, ..Default::default() })?;
    let (cal, test) = resplit(&data, 2500, 9)?;
    let alpha = 0.1;
    let labels = test.labels();
    let features: Vec<_> = test.probs().cloned().collect();

    for (name, cfg) in [("aps", ScoreConfig::aps()), ("raps", ScoreConfig::raps(0.01, 3))] {
        let (_, sets) = run_cp(&cal, &test, alpha, cfg)?;
        let per_class = class_coverage(&sets, &labels, test.k())?;
        let worst = wsc(&features, &sets, &labels, 0.25, 200, 0)?;
        let strat = sscv(&sets, &labels, alpha, &default_sscv_bins(test.k()))?;
        println!("{name}: worst-slab {worst:.4}, size-stratified violation {strat:.4}");
        let row: Vec<_> = per_class.iter().map(|c| c.map_or("-".into(), |c| format!("{c:.3}"))).collect();
        println!("  class coverage {}", row.join(" "));
    }
    Ok(())
}
