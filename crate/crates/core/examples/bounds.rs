//! Entropy-based bounds on APS scores and set sizes.
//!
//! `cargo run --example bounds`

use ec3::bounds::{c_k, prop1_check, prop1_crossing, prop2_check, thm2_check};
use ec3::conformal::{resplit, run_cp};
use ec3::prob::ProbVector;
use ec3::scores::ScoreConfig;
use ec3::synth::{generate, Distortion, SynthConfig};

fn main() -> ec3::Result<()> {
    for k in [2, 10, 100, 1000] {
        println!("K={k:4}: C_K = {:.4}, ln K = {:.4}, branch crossing at H = {:.4}", c_k(k)?, (k as f64).ln(), prop1_crossing(k)?);
    }

    let p = ProbVector::new(vec![0.6, 0.2, 0.1, 0.05, 0.05])?;
    let r = prop1_check(&p);
    println!("\nper-sample bound: mean score {:.4} <= {:.4} (slack {:.4})", r.lhs, r.rhs, r.slack);

    // the set-size bound needs the true conditional distributions
    let data = generate(&SynthConfig { n: 6000, distortion: Distortion::Blur(1.5), seed: 4, ..Default::default() })?;
    let (cal, test) = resplit(&data, 3000, 0)?;
    let alpha = 0.1;
    let (calib, _) = run_cp(&cal, &test, alpha, ScoreConfig::aps())?;

    let p2 = prop2_check(&cal, alpha, 0.05, &ScoreConfig::aps())?;
    println!("\ntail score bound: {:.4} <= {:.4} holds={} skipped={}", p2.lhs, p2.rhs, p2.holds, p2.skipped);
    let t2 = thm2_check(&cal, &test, &calib, alpha, 0.05)?;
    println!("set-size bound:   {:.4} <= {:.4} holds={}", t2.lhs, t2.rhs, t2.holds);
    for (name, v) in &t2.components {
        println!("  {name:20} {v:.5}");
    }
    Ok(())
}
