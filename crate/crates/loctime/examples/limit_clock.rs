//! The limit clock of a transient boundary and a few of its quantiles.

use loctime::limit::{ClockDistribution, Horizon};
use loctime::survival::McConfig;
use loctime::BoundaryFunction;
use rand::SeedableRng;

fn main() -> loctime::Result<()> {
    let f = BoundaryFunction::sqrt_log(1.5, 0.5)?;
    let nodes: Vec<f64> = (0..=24)
        .map(|k| 0.05 * 1000f64.powf(k as f64 / 24.0))
        .collect();
    let clock = ClockDistribution::estimate(
        &f,
        &nodes,
        Horizon::Infinite,
        128,
        &McConfig::new(200_000, 4),
    )?;
    println!(
        "Phi(inf) = {:.4}, total mass {:.9}",
        clock.big_phi,
        clock.total_mass()
    );
    for u in [0.25, 0.5, 0.75, 0.9] {
        println!("quantile {u}: {:.4e}", clock.quantile(u));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let draws: Vec<f64> = (0..5).map(|_| clock.sample(&mut rng)).collect();
    println!("draws: {draws:.3?}");
    Ok(())
}
