//! APS and RAPS scores for a single probability vector.
//!
//! `cargo run --example scores`

use ec3::prob::{sort_desc, ProbVector};
use ec3::scores::{aps_scores_all, avg_score, ScoreConfig};

fn main() -> ec3::Result<()> {
    let p = ProbVector::new(vec![0.05, 0.5, 0.1, 0.3, 0.05])?;
    let sorted = sort_desc(&p);
    println!("probs   {:?}", p.as_slice());
    println!("order   {:?}", sorted.order);
    println!("entropy {:.4} nats, mean APS score {:.4}", p.entropy(), avg_score(&p));

    let aps = aps_scores_all(&p);
    let raps = ScoreConfig::raps(0.05, 2);
    println!("\nclass  rank  aps     raps   randomized aps (u=0.5)");
    let rand_aps = ScoreConfig { randomized: true, ..ScoreConfig::aps() };
    for (y, (rank, a)) in sorted.rank.iter().zip(&aps).enumerate() {
        println!(
            "{y:5}  {rank:4}  {a:.3}  {:.3}  {:.3}",
            raps.score(&p, y, 0.0)?,
            rand_aps.score(&p, y, 0.5)?
        );
    }
    Ok(())
}
