//! One path of the transient limit process: conditioned segment, excursions, Bessel(3) tail.

use loctime::limit::{
    sample_transient_path, ClockDistribution, Horizon, PathBudgets, TransientOutcome,
};
use loctime::rng::Seed;
use loctime::survival::McConfig;
use loctime::BoundaryFunction;

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
        &McConfig::new(100_000, 4),
    )?;
    let mut budgets = PathBudgets::new(1e-2);
    budgets.tail_duration = 10.0;
    for i in 0..20 {
        match sample_transient_path(&f, &clock, &budgets, Seed(11), i)? {
            TransientOutcome::Path(p) => {
                eprintln!(
                    "sample {i}: clock {:.3}, {} excursions, tail starts at {:.3}, sign {}",
                    p.clock,
                    p.excursions.len(),
                    p.tail_start,
                    p.sign
                );
                p.write_csv(std::io::stdout())?;
                return Ok(());
            }
            TransientOutcome::OverBudget { clock } => {
                eprintln!("sample {i}: clock {clock:.1} over budget")
            }
        }
    }
    Ok(())
}
