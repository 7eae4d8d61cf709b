//! Split conformal prediction on a synthetic overconfident classifier.
//!
//! `cargo run --example quickstart`

use ec3::conformal::{resplit, run_cp};
use ec3::metrics::{evaluate, EvalOptions};
use ec3::scores::ScoreConfig;
use ec3::synth::{generate, SynthConfig};

fn main() -> ec3::Result<()> {
    let data = generate(&SynthConfig { n: 4000, seed: 1, ..Default::default() })?;
    let (cal, test) = resplit(&data, 2000, 7)?;

    let alpha = 0.1;
    let (calib, sets) = run_cp(&cal, &test, alpha, ScoreConfig::aps())?;
    println!("threshold eta = {:.6} from {} calibration scores", calib.eta_hat, calib.n_cal);

    let features: Vec<_> = test.probs().cloned().collect();
    let opts = EvalOptions { wsc_directions: 100, ..Default::default() };
    let r = evaluate(&features, &sets, &test.labels(), alpha, &opts)?;
    println!("coverage     {:.4} (target {:.2})", r.coverage, 1.0 - alpha);
    println!("mean size    {:.3}", r.efficiency);
    println!("mean entropy {:.3}", r.mean_entropy);
    println!("worst slab   {:.4}", r.wsc);

    for (s, y) in sets.iter().zip(test.labels()).take(5) {
        println!("set of size {:2} contains label {y}: {}", s.size(), s.contains(y));
    }
    Ok(())
}
