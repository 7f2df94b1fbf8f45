//! Vervaat excursions and Bessel(3) paths.

use loctime::limit::{sample_bessel3, sample_unit_excursion};
use rand::SeedableRng;

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut maxima: Vec<f64> = (0..5000)
        .map(|_| {
            sample_unit_excursion(1024, &mut rng)
                .into_iter()
                .fold(0.0, f64::max)
        })
        .collect();
    maxima.sort_by(f64::total_cmp);
    println!("median max of a unit excursion (1024 steps): {:.4}, continuum 1.2235 less about 0.58/sqrt(m)", maxima[2500]);

    let b = sample_bessel3(10.0, 1e-3, &mut rng);
    let min_after_one = b[1000..].iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "Bessel(3) on [0, 10]: end {:.3}, min after t=1 {:.4}",
        b[b.len() - 1],
        min_after_one
    );
}
