//! Pre-limit Q-marginal of `τ_h` for the recurrent boundary `γ = 1`.

use loctime::limit::{estimate_q_marginal, QMarginalConfig};
use loctime::survival::McConfig;
use loctime::BoundaryFunction;

fn main() -> loctime::Result<()> {
    let f = BoundaryFunction::sqrt_log(1.0, 0.5)?;
    let h = 4.0;
    let qc = QMarginalConfig::new(&f, h);
    let est = estimate_q_marginal(&f, &qc, &McConfig::new(500_000, 6))?;
    println!(
        "t = {}, P(O_h) = {:.4}, P(O_t) = {:.3e}",
        est.t_prelimit, est.survival_h, est.survival_t
    );
    for b in &est.bins {
        println!(
            "[{:10.1}, {:10.1})  q {:8.3} ± {:.3}",
            b.y_lo, b.y_hi, b.q_hat, b.stderr
        );
    }
    println!("monotone within 3 SE: {}", est.monotone_within(3.0));
    println!(
        "tail / y^-3/2 envelope at 20g(h): {:.3}",
        est.tail_envelope_ratio(20.0 * f.g(h))?
    );
    Ok(())
}
