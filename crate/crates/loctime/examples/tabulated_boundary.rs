//! A boundary given by a table of knots, classified by its tail exponent.

use loctime::boundary::{integral_test, Table};
use loctime::BoundaryFunction;

fn main() -> loctime::Result<()> {
    let t: Vec<f64> = std::iter::once(0.0)
        .chain((0..=40).map(|k| 10f64.powf(k as f64 / 8.0)))
        .collect();
    let f: Vec<f64> = t.iter().map(|&x| 0.5f64.max(x.powf(0.3))).collect();
    let table = BoundaryFunction::tabulated(Table::new(t, f)?)?;
    let r = integral_test(&table, &[10.0, 1e3, 1e6])?;
    println!(
        "{:?} (heuristic: {}), I(f) partials {:.4?}",
        r.classification, r.heuristic, r.i_f_partial
    );
    println!("f(1e6) = {:.3}, g(5) = {:.3}", table.f(1e6), table.g(5.0));
    Ok(())
}
