//! Integral test and grid conditions for a few boundaries.

use loctime::boundary::{check_conditions, integral_test};
use loctime::BoundaryFunction;

fn main() -> loctime::Result<()> {
    let cutoffs: Vec<f64> = (1..=12).map(|k| 10f64.powi(2 * k)).collect();
    let cases = [
        ("sqrt-log γ=0.9", BoundaryFunction::sqrt_log(0.9, 0.5)?),
        ("sqrt-log γ=1", BoundaryFunction::sqrt_log(1.0, 0.5)?),
        ("sqrt-log γ=1.5", BoundaryFunction::sqrt_log(1.5, 0.5)?),
        ("power β=0.25", BoundaryFunction::power(0.25, 0.5)?),
    ];
    for (name, f) in &cases {
        let r = integral_test(f, &cutoffs)?;
        let c = check_conditions(f, 1e30, 0.1)?;
        println!(
            "{name:16} {:?}  I(f) up to 1e24 = {:.4}  J(g) up to 1e24 = {:.4}  growth condition: {}",
            r.classification,
            r.i_f_partial.last().unwrap(),
            r.j_g_partial.last().unwrap(),
            c.growth.holds
        );
    }
    Ok(())
}
