//! Envelope criterion `J_w(h)` for the builtin weights, numeric against the closed rule.

use loctime::repulsion::{builtin_pairs, default_ln_h_grid, envelope_criterion};
use loctime::BoundaryFunction;

fn main() -> loctime::Result<()> {
    let grid = default_ln_h_grid();
    for (gamma, w) in builtin_pairs() {
        let f = BoundaryFunction::sqrt_log(gamma, 0.5)?;
        let v = envelope_criterion(&f, &w, &grid)?;
        let rule = v
            .closed_form
            .as_ref()
            .map_or("none", |a| a.verdict.as_str());
        println!(
            "γ={gamma:3} w={:14} J(ln h=1e6) = {:.3e}  numeric {:16} rule {rule}",
            v.weight,
            v.limit_estimate(),
            v.verdict.as_str()
        );
    }
    Ok(())
}
