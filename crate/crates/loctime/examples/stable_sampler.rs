//! Exact draws of the inverse local time against its law.

use loctime::stable::{sample_first_big_jump, sample_tau_increment, tau_cdf, tau_survival};
use loctime::stats::{ks_statistic, mean_se};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut xs: Vec<f64> = (0..100_000)
        .map(|_| sample_tau_increment(1.0, &mut rng))
        .collect();
    xs.sort_by(f64::total_cmp);
    println!(
        "KS distance of 1e5 draws of τ_1: {:.5}",
        ks_statistic(&xs, |t| tau_cdf(1.0, t))
    );

    // τ_t has the law of t²τ_1
    for t in [2.0, 5.0] {
        let hits = (0..100_000)
            .filter(|_| sample_tau_increment(t, &mut rng) > t * t)
            .count();
        println!(
            "P(τ_{t} > {}) ≈ {:.4}, exact {:.4}",
            t * t,
            hits as f64 / 1e5,
            tau_survival(1.0, 1.0)
        );
        // the same as P(τ_1 > 1) by scaling
    }

    for a in [1.0, 100.0] {
        let d: Vec<f64> = (0..100_000)
            .map(|_| sample_first_big_jump(a, &mut rng))
            .collect();
        let (m, se) = mean_se(&d);
        println!(
            "local time of the first jump above {a}: mean {m:.4} ± {se:.4}, exact {:.4}",
            (std::f64::consts::PI * a / 2.0).sqrt()
        );
    }
}
