//! Monte Carlo `φ̂` against `2KΦ̂/√g` and the renewal solution started at `t0 = 1`.

use loctime::renewal::{asymptotic_rows, predict_phi, solve_renewal};
use loctime::survival::{build_survival_curve, McConfig};
use loctime::BoundaryFunction;

fn main() -> loctime::Result<()> {
    let f = BoundaryFunction::sqrt_log(1.5, 0.5)?;
    let times = [1.0, 4.0, 16.0, 64.0];
    let curve = build_survival_curve(&f, &times, 256, &McConfig::new(1_000_000, 2))?;
    let rows = asymptotic_rows(&f, &curve);
    let sol = solve_renewal(&f, 1.0, rows[0].big_phi, &times, None)?;
    println!("Phi(inf) from the renewal solution: {:.4}", sol.plateau());
    for r in &rows {
        let p = predict_phi(&f, &sol, r.t)?;
        println!(
            "t={:5}: phi {:.4e}  2K Phi/sqrt(g) {:.4e}  ratio {:.4}  renewal {:.4e}",
            r.t, r.phi.point, r.predicted, r.ratio, p.from_solution
        );
    }
    Ok(())
}
