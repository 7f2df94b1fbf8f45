//! Bracketed survival probabilities `P(O_t)` and the occupation integral `Φ̂`.

use loctime::survival::{build_survival_curve, McConfig};
use loctime::BoundaryFunction;

fn main() -> loctime::Result<()> {
    let f = BoundaryFunction::sqrt_log(1.5, 0.5)?;
    let curve = build_survival_curve(
        &f,
        &[1.0, 2.0, 5.0, 10.0, 50.0, 200.0],
        256,
        &McConfig::new(200_000, 1),
    )?;
    curve.write_csv(std::io::stdout())?;
    Ok(())
}
