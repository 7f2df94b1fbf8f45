//! The stable-1/2 subordinator τ (inverse local time of Brownian motion):
//! exact and truncated sampling, jump laws and Laplace exponents.

use std::io::{Read, Write};

use libm::{erf, erfc};
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, Tolerance};

/// `K = 1/√(2π)`, the Lévy density constant: `Π(ds) = K s^{-3/2} ds`.
pub const K: f64 = 0.398_942_280_401_432_677_939_946_059_934_381_868;

/// Lévy density `K s^{-3/2}`.
pub fn levy_density(s: f64) -> f64 {
    K * s.powf(-1.5)
}

/// Tail `Π̄(x) = 2K/√x`: intensity of jumps larger than `x`.
pub fn levy_tail(x: f64) -> f64 {
    2.0 * K / x.sqrt()
}

fn nonzero_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() > 1e-150 {
            return z;
        }
    }
}

/// Exact draw of `τ_δ = (δ/|Z|)²`.
pub fn sample_tau_increment<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> f64 {
    debug_assert!(delta >= 0.0);
    if delta == 0.0 {
        return 0.0;
    }
    let z = nonzero_normal(rng);
    (delta / z).powi(2)
}

/// `P(τ_u > t) = erf(u/√(2t))`.
pub fn tau_survival(u: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    erf(u / (2.0 * t).sqrt())
}

/// `P(τ_u <= t) = 2(1 - Φ_N(u/√t))`.
pub fn tau_cdf(u: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    erfc(u / (2.0 * t).sqrt())
}

/// Density `u e^{-u²/(2t)} / √(2π t³)`.
pub fn tau_density(u: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    u * (-u * u / (2.0 * t)).exp() * K / (t * t * t).sqrt()
}

/// Local time of the first jump larger than `a`, exponential with rate `2K/√a`.
pub fn sample_first_big_jump<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    Exp::new(levy_tail(a)).expect("positive rate").sample(rng)
}

/// Size of a jump conditioned to exceed `a`: `a/U²`.
pub fn sample_conditional_jump_size<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    a / (u * u)
}

/// Jumps above `cap` removed, jumps at or below `small_cut` replaced by their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationSpec {
    cap: f64,
    small_cut: f64,
}

impl TruncationSpec {
    pub fn new(cap: f64, small_cut: f64) -> Result<Self> {
        if !(small_cut > 0.0 && cap > 0.0) {
            return Err(Error::InvalidParameter(
                "truncation levels must be positive".into(),
            ));
        }
        if small_cut >= cap {
            return Err(Error::InvalidParameter(format!(
                "small cut {small_cut} must lie below the cap {cap}"
            )));
        }
        Ok(Self { cap, small_cut })
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn small_cut(&self) -> f64 {
        self.small_cut
    }

    /// Drift replacing the compensated small jumps: `K∫₀^ε s^{-1/2} ds = 2K√ε`.
    pub fn compensation_rate(&self) -> f64 {
        2.0 * K * self.small_cut.sqrt()
    }

    /// Intensity of jumps in `(ε, a]`.
    pub fn jump_rate(&self) -> f64 {
        2.0 * K * (self.small_cut.powf(-0.5) - self.cap.powf(-0.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub local_time: f64,
    pub size: f64,
}

/// A realised trajectory of τ on a local-time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorPath {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub big_jumps: Vec<JumpRecord>,
    pub record_threshold: f64,
}

impl SubordinatorPath {
    pub fn is_nondecreasing(&self) -> bool {
        self.values.first() == Some(&0.0) && self.values.windows(2).all(|w| w[1] >= w[0])
    }

    /// Index of the grid cell `[s_i, s_{i+1})` containing `s`.
    pub fn cell_of(&self, s: f64) -> usize {
        self.grid
            .partition_point(|&x| x <= s)
            .saturating_sub(1)
            .min(self.grid.len().saturating_sub(2))
    }

    /// Writes the binary dump: a header then `(s, τ)` pairs and jump records as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W, header: &DumpHeader) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&header.seed.to_le_bytes())?;
        w.write_all(&header.path_index.to_le_bytes())?;
        w.write_all(&header.cap.to_le_bytes())?;
        w.write_all(&header.small_cut.to_le_bytes())?;
        w.write_all(&self.record_threshold.to_le_bytes())?;
        w.write_all(&(self.grid.len() as u64).to_le_bytes())?;
        w.write_all(&(self.big_jumps.len() as u64).to_le_bytes())?;
        for (s, v) in self.grid.iter().zip(&self.values) {
            w.write_all(&s.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        for j in &self.big_jumps {
            w.write_all(&j.local_time.to_le_bytes())?;
            w.write_all(&j.size.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<(Self, DumpHeader)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Validation("not a path dump".into()));
        }
        let version = read_u32(&mut r)?;
        if version != DUMP_VERSION {
            return Err(Error::Validation(format!(
                "unsupported dump version {version}"
            )));
        }
        let seed = read_u64(&mut r)?;
        let path_index = read_u64(&mut r)?;
        let cap = read_f64(&mut r)?;
        let small_cut = read_f64(&mut r)?;
        let record_threshold = read_f64(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let m = read_u64(&mut r)? as usize;
        let mut grid = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            grid.push(read_f64(&mut r)?);
            values.push(read_f64(&mut r)?);
        }
        let big_jumps = (0..m)
            .map(|_| {
                Ok(JumpRecord {
                    local_time: read_f64(&mut r)?,
                    size: read_f64(&mut r)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let path = Self {
            grid,
            values,
            big_jumps,
            record_threshold,
        };
        Ok((
            path,
            DumpHeader {
                seed,
                path_index,
                cap,
                small_cut,
            },
        ))
    }
}

const DUMP_MAGIC: &[u8; 4] = b"LTBP";
const DUMP_VERSION: u32 = 1;

/// Provenance written in front of a binary path dump. `cap = ∞`, `small_cut = 0` for exact paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpHeader {
    pub seed: u64,
    pub path_index: u64,
    pub cap: f64,
    pub small_cut: f64,
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&0.0) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(
            "grid must start at 0 and be nondecreasing".into(),
        ));
    }
    Ok(())
}

/// Compound-Poisson path of the truncated subordinator on `grid`.
pub fn sample_truncated_path<R: Rng + ?Sized>(
    spec: &TruncationSpec,
    grid: &[f64],
    record_threshold: f64,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    check_grid(grid)?;
    let drift = spec.compensation_rate();
    let rate = spec.jump_rate();
    let (lo, hi) = (spec.cap.powf(-0.5), spec.small_cut.powf(-0.5));
    let mut values = Vec::with_capacity(grid.len());
    let mut big_jumps = Vec::new();
    let mut level = 0.0;
    values.push(0.0);
    for w in grid.windows(2) {
        let delta = w[1] - w[0];
        if delta > 0.0 {
            let mean = rate * delta;
            let count = Poisson::new(mean)
                .map(|p| p.sample(rng) as u64)
                .unwrap_or(0);
            let mut inc = drift * delta;
            let first_record = big_jumps.len();
            for _ in 0..count {
                let u: f64 = rng.random();
                let size = (lo + u * (hi - lo)).powi(-2);
                inc += size;
                if size > record_threshold {
                    big_jumps.push(JumpRecord {
                        local_time: w[0] + rng.random::<f64>() * delta,
                        size,
                    });
                }
            }
            big_jumps[first_record..].sort_by(|a, b| a.local_time.total_cmp(&b.local_time));
            level += inc;
        }
        values.push(level);
    }
    Ok(SubordinatorPath {
        grid: grid.to_vec(),
        values,
        big_jumps,
        record_threshold,
    })
}

fn check_exponent(lambda: f64, a: f64) -> Result<()> {
    if lambda * a > 700.0 {
        return Err(Error::Overflow(format!(
            "λ·a = {:.3e} exceeds the exponent range",
            lambda * a
        )));
    }
    Ok(())
}

/// `∫₀^y (e^{λs} - 1) s^{-3/2} ds`, computed with `s = v²`.
fn exponential_moment_integral(lambda: f64, y: f64) -> Result<f64> {
    check_exponent(lambda, y)?;
    let integrand = |v: f64| {
        let x = lambda * v * v;
        if x.abs() < 1e-8 {
            2.0 * lambda * (1.0 + 0.5 * x)
        } else {
            2.0 * x.exp_m1() / (v * v)
        }
    };
    Ok(integrate(integrand, 0.0, y.sqrt(), Tolerance::new(1e-12, 1e-12))?.value)
}

/// `Ψ_a(λ) = K∫₀^a (e^{λs} - 1) s^{-3/2} ds`, the exponent of `E e^{λ τ^a_1}`.
pub fn truncated_laplace_exponent(lambda: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cap must be positive, got {a}"
        )));
    }
    Ok(K * exponential_moment_integral(lambda, a)?)
}

/// Exponential Markov bound on `P(τ^{a_δ}_t > c a)` with `a_δ = a / ln^δ a`.
pub fn markov_tail_bound(a: f64, delta: f64, c: f64, n: u32, t: f64) -> Result<f64> {
    if !(a > 1.0 && delta > 0.0 && c > 0.0 && n > 0 && t >= 0.0) {
        return Err(Error::InvalidParameter(
            "need a > 1, δ > 0, c > 0, n >= 1, t >= 0".into(),
        ));
    }
    let n = n as f64;
    let la = a.ln();
    let moment = exponential_moment_integral(1.0, n / c)?;
    let exponent =
        t * K * n.sqrt() * la.powf(delta / 2.0) / (c * a).sqrt() * moment - n * la.powf(delta);
    Ok(exponent.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Lane, Seed};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rng() -> rand_chacha::ChaCha8Rng {
        Seed(11).stream(0, Lane::Base)
    }

    #[test]
    fn constants() {
        assert_relative_eq!(
            K,
            1.0 / (2.0 * std::f64::consts::PI).sqrt(),
            max_relative = 1e-15
        );
        for x in [0.5, 1.0, 10.0] {
            let q =
                crate::quad::integrate_to_infinity(levy_density, x, Tolerance::new(1e-13, 1e-12))
                    .unwrap();
            assert_relative_eq!(q.value, levy_tail(x), max_relative = 1e-10);
        }
    }

    #[test]
    fn law_values() {
        assert_relative_eq!(
            tau_survival(1.0, 1.0),
            0.682_689_492_137_085_9,
            max_relative = 1e-12
        );
        assert!(tau_survival(1.0, 1e12) < 1e-5);
        for (u, t) in [(2.0, 8.0), (3.0, 18.0)] {
            assert_relative_eq!(
                tau_survival(u, t),
                tau_survival(1.0, t / (u * u)),
                max_relative = 1e-12
            );
        }
        assert_relative_eq!(
            tau_density(1.0, 1.0),
            0.241_970_724_519_143_37,
            max_relative = 1e-12
        );
        let mass =
            crate::quad::integrate_to_infinity(|t| tau_density(1.0, t), 0.0, Tolerance::default())
                .unwrap();
        assert_relative_eq!(mass.value, 1.0, epsilon = 1e-8);
        // mode of the density of τ_2 at u²/3
        let m = 4.0 / 3.0;
        assert!(tau_density(2.0, m) > tau_density(2.0, m * 1.001));
        assert!(tau_density(2.0, m) > tau_density(2.0, m * 0.999));
    }

    #[test]
    fn increment_moments() {
        let mut r = rng();
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| 4.0 / sample_tau_increment(2.0, &mut r))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 3.0 * 2f64.sqrt() / (n as f64).sqrt());
        let p = (0..n)
            .filter(|_| sample_tau_increment(1.0, &mut r) > 1.0)
            .count() as f64
            / n as f64;
        let se = (0.6827 * 0.3173 / n as f64).sqrt();
        assert!((p - 0.682_689).abs() < 3.0 * se);
        assert_eq!(sample_tau_increment(0.0, &mut r), 0.0);
    }

    #[test]
    fn big_jump_clock() {
        let mut r = rng();
        let n = 100_000;
        let mean = |a: f64, r: &mut rand_chacha::ChaCha8Rng| {
            (0..n).map(|_| sample_first_big_jump(a, r)).sum::<f64>() / n as f64
        };
        let m1 = mean(1.0, &mut r);
        let target = (std::f64::consts::PI / 2.0).sqrt();
        assert!((m1 - target).abs() < 3.0 * target / (n as f64).sqrt());
        let m4 = mean(4.0, &mut r);
        assert!((m4 / m1 - 2.0).abs() < 0.03);
        // no jump above a before t
        let t = 0.7;
        let hits = (0..n)
            .filter(|_| sample_first_big_jump(1.0, &mut r) > t)
            .count() as f64
            / n as f64;
        let p = (-2.0 * K * t).exp();
        assert!((hits - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn conditional_jump_law() {
        let mut r = rng();
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| sample_conditional_jump_size(3.0, &mut r))
            .collect();
        assert!(draws.iter().all(|&s| s >= 3.0));
        let above = draws.iter().filter(|&&s| s > 12.0).count() as f64 / n as f64;
        assert!((above - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
        draws.sort_by(f64::total_cmp);
        let ks = crate::stats::ks_statistic(&draws, |x| 1.0 - (3.0 / x).sqrt());
        assert!(ks < 0.006, "ks = {ks}");
    }

    #[test]
    fn truncated_path_mean_and_limits() {
        let mut r = rng();
        let grid: Vec<f64> = (0..=4).map(|i| i as f64 * 0.25).collect();
        for a in [1.0, 10.0] {
            let spec = TruncationSpec::new(a, 1e-4).unwrap();
            let n = 20_000;
            let xs: Vec<f64> = (0..n)
                .map(|_| {
                    *sample_truncated_path(&spec, &grid, a, &mut r)
                        .unwrap()
                        .values
                        .last()
                        .unwrap()
                })
                .collect();
            let (m, se) = crate::stats::mean_se(&xs);
            assert!(
                (m - 2.0 * K * a.sqrt()).abs() < 3.0 * se,
                "a={a} m={m} se={se}"
            );
        }
        let spec = TruncationSpec::new(1.0, 1e-6).unwrap();
        let p = sample_truncated_path(&spec, &[0.0, 0.5, 0.5, 1.0], 0.5, &mut r).unwrap();
        assert_eq!(p.values[1], p.values[2]);
        assert!(p.is_nondecreasing());
        assert!(TruncationSpec::new(1.0, 1.0).is_err());
    }

    #[test]
    fn nearly_untruncated_path_matches_exact_law() {
        let mut r = rng();
        let spec = TruncationSpec::new(1e6, 1e-6).unwrap();
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| {
                sample_truncated_path(&spec, &[0.0, 1.0], 1e9, &mut r)
                    .unwrap()
                    .values[1]
                    > 1.0
            })
            .count() as f64
            / n as f64;
        let p = tau_survival(1.0, 1.0);
        assert!(
            (hits - p).abs() < 2.5 * (p * (1.0 - p) / n as f64).sqrt(),
            "{hits}"
        );
    }

    #[test]
    fn recorded_jumps_sit_in_their_cells() {
        let mut r = rng();
        let spec = TruncationSpec::new(50.0, 1e-4).unwrap();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let p = sample_truncated_path(&spec, &grid, 1.0, &mut r).unwrap();
        for j in &p.big_jumps {
            let i = p.cell_of(j.local_time);
            assert!(j.size > 1.0);
            assert!(p.values[i + 1] - p.values[i] >= j.size);
        }
    }

    #[test]
    fn laplace_exponent() {
        let small = truncated_laplace_exponent(1e-9, 2.0).unwrap() / 1e-9;
        assert_relative_eq!(small, 2.0 * K * 2f64.sqrt(), max_relative = 1e-7);
        // brute-force trapezoid in v = √s on 10⁶ cells
        let n = 1_000_000;
        let h = 1.0 / n as f64;
        let f = |v: f64| {
            if v == 0.0 {
                2.0
            } else {
                2.0 * (v * v).exp_m1() / (v * v)
            }
        };
        let trap: f64 = (0..n)
            .map(|i| 0.5 * h * (f(i as f64 * h) + f((i + 1) as f64 * h)))
            .sum();
        assert_relative_eq!(
            truncated_laplace_exponent(1.0, 1.0).unwrap(),
            K * trap,
            max_relative = 1e-8
        );
        assert!(
            truncated_laplace_exponent(1.0, 3.0).unwrap()
                > truncated_laplace_exponent(1.0, 2.0).unwrap()
        );
        assert!(truncated_laplace_exponent(1.0, 800.0).is_err());
    }

    #[test]
    fn markov_bound_properties() {
        let a = 4f64.exp();
        assert_relative_eq!(
            markov_tail_bound(a, 1.0, 1.0, 3, 0.0).unwrap(),
            (-3.0 * 4.0f64).exp()
        );
        let big = 1e12;
        let vals: Vec<f64> = (1..=8)
            .map(|n| markov_tail_bound(big, 1.0, 1.0, n, 1.0).unwrap())
            .collect();
        let argmin = vals
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .unwrap()
            .0;
        assert!(vals[argmin..].windows(2).all(|w| w[1] >= w[0]) || argmin == 7);
        assert!(vals[..=argmin].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn markov_bound_dominates_simulation() {
        let a = 4f64.exp();
        let cap = a / a.ln();
        let bound = markov_tail_bound(a, 1.0, 1.0, 2, 1.0).unwrap();
        let spec = TruncationSpec::new(cap, 1e-3).unwrap();
        let mut r = rng();
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                sample_truncated_path(&spec, &[0.0, 1.0], f64::INFINITY, &mut r)
                    .unwrap()
                    .values[1]
                    > a
            })
            .count() as f64
            / n as f64;
        assert!(bound >= hits, "bound {bound} < {hits}");
    }

    #[test]
    fn dump_round_trip() {
        let mut r = rng();
        let spec = TruncationSpec::new(5.0, 1e-3).unwrap();
        let p = sample_truncated_path(&spec, &[0.0, 0.3, 1.0, 2.0], 0.5, &mut r).unwrap();
        let header = DumpHeader {
            seed: 11,
            path_index: 0,
            cap: 5.0,
            small_cut: 1e-3,
        };
        let mut buf = Vec::new();
        p.write_binary(&mut buf, &header).unwrap();
        let (q, h) = SubordinatorPath::read_binary(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert_eq!(h, header);
        assert!(SubordinatorPath::read_binary(&b"nope"[..]).is_err());
    }

    proptest! {
        #[test]
        fn survival_scaling(u in 0.1f64..10.0, t in 0.01f64..100.0) {
            let lhs = tau_survival(u, t);
            let rhs = tau_survival(1.0, t / (u * u));
            prop_assert!((lhs - rhs).abs() <= 1e-12);
            prop_assert!((tau_cdf(u, t) + lhs - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn truncated_paths_nondecreasing(seed in 0u64..1000, a in 0.5f64..100.0) {
            let mut r = Seed(seed).stream(0, Lane::Base);
            let spec = TruncationSpec::new(a, 1e-3).unwrap();
            let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
            let p = sample_truncated_path(&spec, &grid, 0.1, &mut r).unwrap();
            prop_assert!(p.is_nondecreasing());
            prop_assert!(p.big_jumps.iter().all(|j| j.size > 0.1 && j.size <= a));
        }
    }
}
