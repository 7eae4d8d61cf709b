//! Sweep softmax temperatures and pick the entropy/efficiency trade-off.
//!
//! `cargo run --example temperature_pareto`

use ec3::conformal::resplit;
use ec3::scores::ScoreConfig;
use ec3::synth::{generate, SynthConfig};
use ec3::tempering::{log_grid, pareto_filter, select_by_entropy, temp_sweep};

fn main() -> ec3::Result<()> {
    let data = generate(&SynthConfig { n: 6000, seed: 5, ..Default::default() })?;
    let (cal, test) = resplit(&data, 3000, 5)?;

    let grid = log_grid(0.5, 8.0, 9);
    let points = temp_sweep(&cal, &test, 0.1, &grid, ScoreConfig::aps(), 5)?;
    println!("    T   entropy   size  coverage");
    for p in &points {
        println!("{:5.2}  {:8.4}  {:5.3}  {:.4}", p.temperature, p.mean_entropy, p.efficiency, p.coverage);
    }

    let front = pareto_filter(&points);
    let temps: Vec<_> = front.iter().map(|p| format!("{:.2}", p.temperature)).collect();
    println!("\npareto front temperatures: {}", temps.join(", "));

    let threshold = 0.5;
    match select_by_entropy(&points, threshold) {
        Some(p) => println!("smallest sets with entropy <= {threshold}: T={:.2}, size {:.3}", p.temperature, p.efficiency),
        None => println!("no temperature keeps mean entropy <= {threshold}"),
    }
    Ok(())
}
