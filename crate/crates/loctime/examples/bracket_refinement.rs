//! Halving the constraint mesh with common random numbers roughly halves the bracket gap.

use loctime::survival::{refinement_study, McConfig};
use loctime::BoundaryFunction;

fn main() -> loctime::Result<()> {
    let f = BoundaryFunction::sqrt_log(1.0, 0.5)?;
    for t in [2.0, 5.0, 10.0] {
        let r = refinement_study(&f, t, 256, &McConfig::new(200_000, 3))?;
        println!(
            "t={t:5}: {} pts [{:.5}, {:.5}]  {} pts [{:.5}, {:.5}]  gap ratio {:.3}",
            r.base_points,
            r.base_lower,
            r.base_upper,
            r.fine_points,
            r.fine_lower,
            r.fine_upper,
            r.gap_ratio()
        );
    }
    Ok(())
}
