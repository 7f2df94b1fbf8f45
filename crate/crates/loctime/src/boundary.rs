//! Boundary functions `f` bounding the local time, their inverses `g = f⁻¹`,
//! and the analytic criteria built from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_to_infinity, Tolerance};

const VALIDATION_HORIZON: f64 = 1e8;
const VALIDATION_PER_DECADE: usize = 64;

/// Piecewise-linear boundary given by knots `(t, f(t))` starting at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    t: Vec<f64>,
    f: Vec<f64>,
}

impl Table {
    pub fn new(t: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        if t.len() != f.len() || t.len() < 3 {
            return Err(Error::Validation(
                "table needs at least three (t, f) rows".into(),
            ));
        }
        if t[0] != 0.0 {
            return Err(Error::Validation("table must start at t = 0".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(
                "t column must be strictly increasing".into(),
            ));
        }
        if f.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("f column must be nondecreasing".into()));
        }
        if t.iter().chain(&f).any(|v| !v.is_finite()) {
            return Err(Error::Validation("table contains non-finite values".into()));
        }
        if f[f.len() - 1] <= f[0] {
            return Err(Error::Validation(
                "table never rises above its floor".into(),
            ));
        }
        Ok(Self { t, f })
    }

    /// Reads a two-column CSV `t,f`; a non-numeric first row is taken as a header.
    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let (mut t, mut f) = (Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Validation(format!(
                    "row {} has fewer than two columns",
                    row + 1
                )));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    t.push(a);
                    f.push(b);
                }
                _ if row == 0 => continue,
                _ => return Err(Error::Validation(format!("row {} is not numeric", row + 1))),
            }
        }
        Self::new(t, f)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Config(format!(
                "cannot open boundary table {}: {e}",
                path.display()
            ))
        })?;
        Self::from_reader(file)
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.t.iter().copied().zip(self.f.iter().copied())
    }

    /// Log-log slope of the last segment, used to extrapolate beyond the table.
    fn tail_exponent(&self) -> f64 {
        let n = self.t.len();
        let (t0, t1) = (self.t[n - 2], self.t[n - 1]);
        let (f0, f1) = (self.f[n - 2], self.f[n - 1]);
        if t0 <= 0.0 {
            return 1.0;
        }
        (f1 / f0).ln() / (t1 / t0).ln()
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.t.len();
        if t <= 0.0 {
            return self.f[0];
        }
        if t >= self.t[n - 1] {
            return self.f[n - 1] * (t / self.t[n - 1]).powf(self.tail_exponent());
        }
        let i = self.t.partition_point(|&s| s <= t) - 1;
        let w = (t - self.t[i]) / (self.t[i + 1] - self.t[i]);
        self.f[i] + w * (self.f[i + 1] - self.f[i])
    }

    fn inverse(&self, x: f64) -> f64 {
        let n = self.t.len();
        if x > self.f[n - 1] {
            let p = self.tail_exponent();
            if p <= 0.0 {
                return f64::INFINITY;
            }
            return self.t[n - 1] * (x / self.f[n - 1]).powf(1.0 / p);
        }
        // first knot with f >= x, segment below it is rising
        let j = self.f.partition_point(|&v| v < x);
        let (fa, fb) = (self.f[j - 1], self.f[j]);
        let (ta, tb) = (self.t[j - 1], self.t[j]);
        ta + (x - fa) / (fb - fa) * (tb - ta)
    }

    fn floor_end(&self) -> (f64, f64) {
        let j = self.f.partition_point(|&v| v <= self.f[0]);
        let slope = (self.t[j] - self.t[j - 1]) / (self.f[j] - self.f[j - 1]);
        (self.t[j - 1], slope)
    }
}

/// Which family realises the raw boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BoundaryKind {
    /// `√t (ln A / ln(A-1+t))^γ`.
    SqrtLog {
        gamma: f64,
    },
    /// `t^β` with `β ∈ (0, 1/2)`.
    Power {
        beta: f64,
    },
    Tabulated {
        table: Table,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Transient,
    Recurrent,
}

/// The pair `(f, g)`; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFunction {
    kind: BoundaryKind,
    f0: f64,
    shift: f64,
    floor_end: f64,
    floor_slope: f64,
}

/// Smallest log shift making `√t/ln^γ(A-1+t)` increasing on `(0, ∞)`, with margin.
fn sqrt_log_shift(gamma: f64) -> f64 {
    let needed = 1.0 + 1.25 * (2.0 * gamma - 1.0).exp() / (2.0 * gamma);
    needed.max(std::f64::consts::E)
}

fn ln_shifted(shift: f64, ln_t: f64) -> f64 {
    // ln(A - 1 + t)
    if ln_t > 0.0 {
        ln_t + ((shift - 1.0) * (-ln_t).exp()).ln_1p()
    } else {
        (shift - 1.0 + ln_t.exp()).ln()
    }
}

impl BoundaryFunction {
    pub fn make_family(kind: BoundaryKind, f0: f64) -> Result<Self> {
        let f0 = match &kind {
            BoundaryKind::Tabulated { table } => {
                if f0.is_finite() && (f0 - table.f[0]).abs() > 1e-12 {
                    return Err(Error::Validation(format!(
                        "requested floor {f0} differs from the table's f(0) = {}",
                        table.f[0]
                    )));
                }
                table.f[0]
            }
            _ => f0,
        };
        if !(f0 > 0.0 && f0 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "f(0) must lie in (0, 1), got {f0}"
            )));
        }
        let shift = match &kind {
            BoundaryKind::SqrtLog { gamma } => {
                if !(*gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma must be positive, got {gamma}"
                    )));
                }
                sqrt_log_shift(*gamma)
            }
            BoundaryKind::Power { beta } => {
                if !(*beta > 0.0 && *beta < 0.5) {
                    return Err(Error::InvalidParameter(format!(
                        "beta must lie in (0, 1/2), got {beta}"
                    )));
                }
                0.0
            }
            BoundaryKind::Tabulated { .. } => 0.0,
        };
        let mut b = Self {
            kind,
            f0,
            shift,
            floor_end: 0.0,
            floor_slope: 0.0,
        };
        match &b.kind {
            BoundaryKind::Tabulated { table } => {
                let (end, slope) = table.floor_end();
                b.floor_end = end;
                b.floor_slope = slope;
            }
            _ => {
                let tc = b.raw_inverse(f0.ln()).exp();
                b.floor_end = tc;
                b.floor_slope = 1.0 / b.raw_derivative(tc);
            }
        }
        b.validate()?;
        Ok(b)
    }

    pub fn sqrt_log(gamma: f64, f0: f64) -> Result<Self> {
        Self::make_family(BoundaryKind::SqrtLog { gamma }, f0)
    }

    pub fn power(beta: f64, f0: f64) -> Result<Self> {
        Self::make_family(BoundaryKind::Power { beta }, f0)
    }

    pub fn tabulated(table: Table) -> Result<Self> {
        Self::make_family(BoundaryKind::Tabulated { table }, f64::NAN)
    }

    fn validate(&self) -> Result<()> {
        let one = self.f(1.0);
        if (one - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("f(1) = {one}, expected 1")));
        }
        let decades = (VALIDATION_HORIZON.log10() + 6.0).round() as usize;
        let n = decades * VALIDATION_PER_DECADE;
        let mut prev = self.f(0.0);
        for i in 0..=n {
            let t = 1e-6 * 10f64.powf(i as f64 / VALIDATION_PER_DECADE as f64);
            let v = self.f(t);
            if !(v >= prev) {
                return Err(Error::Validation(format!("f decreases near t = {t:.6e}")));
            }
            prev = v;
        }
        Ok(())
    }

    pub fn kind(&self) -> &BoundaryKind {
        &self.kind
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    /// Time at which `f` leaves its floor.
    pub fn floor_end(&self) -> f64 {
        self.floor_end
    }

    /// `ln raw(t)` as a function of `ln t`.
    fn ln_raw(&self, ln_t: f64) -> f64 {
        match &self.kind {
            BoundaryKind::SqrtLog { gamma } => {
                0.5 * ln_t + gamma * (self.shift.ln().ln() - ln_shifted(self.shift, ln_t).ln())
            }
            BoundaryKind::Power { beta } => beta * ln_t,
            BoundaryKind::Tabulated { table } => table.eval(ln_t.exp()).ln(),
        }
    }

    fn raw_derivative(&self, t: f64) -> f64 {
        match &self.kind {
            BoundaryKind::SqrtLog { gamma } => {
                let a1 = self.shift - 1.0 + t;
                self.ln_raw(t.ln()).exp() * (0.5 / t - gamma / (a1 * a1.ln()))
            }
            BoundaryKind::Power { beta } => beta * t.powf(beta - 1.0),
            BoundaryKind::Tabulated { .. } => 1.0 / self.floor_slope,
        }
    }

    /// Solves `ln raw(e^τ) = ln_x` for τ by bisection.
    fn raw_inverse(&self, ln_x: f64) -> f64 {
        match &self.kind {
            BoundaryKind::Power { beta } => ln_x / beta,
            BoundaryKind::Tabulated { table } => table.inverse(ln_x.exp()).ln(),
            BoundaryKind::SqrtLog { .. } => {
                // raw(t) <= √t for t >= 1 and raw(t) >= √t for t <= 1
                let pivot = 2.0 * ln_x;
                let h = |tau: f64| self.ln_raw(tau) - ln_x;
                let (mut lo, mut hi);
                let mut step = 1.0;
                if ln_x >= 0.0 {
                    lo = pivot;
                    hi = pivot + step;
                    while h(hi) < 0.0 {
                        lo = hi;
                        step *= 2.0;
                        hi = pivot + step;
                    }
                } else {
                    hi = pivot;
                    lo = pivot - step;
                    while h(lo) > 0.0 {
                        hi = lo;
                        step *= 2.0;
                        lo = pivot - step;
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if h(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// The boundary `f(t) = max(f(0), raw(t))`.
    pub fn f(&self, t: f64) -> f64 {
        if let BoundaryKind::Tabulated { table } = &self.kind {
            return table.eval(t);
        }
        if t <= self.floor_end {
            return self.f0;
        }
        self.ln_raw(t.ln()).exp().max(self.f0)
    }

    /// `ln f(t)` as a function of `ln t`; usable far beyond floating range of `t`.
    pub fn ln_f(&self, ln_t: f64) -> f64 {
        if ln_t <= self.floor_end.ln() {
            return self.f0.ln();
        }
        self.ln_raw(ln_t).max(self.f0.ln())
    }

    /// The inverse `g = f⁻¹`; negative below `f(0)` through a linear extension.
    pub fn g(&self, x: f64) -> f64 {
        if x <= self.f0 {
            return self.floor_slope * (x - self.f0);
        }
        match &self.kind {
            BoundaryKind::Power { beta } => x.powf(1.0 / beta),
            BoundaryKind::Tabulated { table } => table.inverse(x),
            BoundaryKind::SqrtLog { .. } => self.raw_inverse(x.ln()).exp(),
        }
    }

    /// `ln g(x)` as a function of `ln x`, for `x > f(0)`.
    pub fn ln_g(&self, ln_x: f64) -> f64 {
        debug_assert!(ln_x > self.f0.ln());
        self.raw_inverse(ln_x)
    }

    /// Jump cap `g(t) ∨ 1` used by the one-jump decompositions.
    pub fn cap(&self, t: f64) -> f64 {
        self.g(t).max(1.0)
    }

    /// Classification read off the family parameters, when the family has a closed rule.
    pub fn analytic_class(&self) -> Option<Classification> {
        match &self.kind {
            BoundaryKind::SqrtLog { gamma } if *gamma > 1.0 => Some(Classification::Transient),
            BoundaryKind::SqrtLog { .. } => Some(Classification::Recurrent),
            BoundaryKind::Power { .. } => Some(Classification::Transient),
            BoundaryKind::Tabulated { .. } => None,
        }
    }

    /// `∫ₐᵇ g(s)^{-1/2} ds` for `1 <= a <= b`, integrated in `ln s`.
    pub fn inverse_root_integral(&self, a: f64, b: f64) -> Result<f64> {
        self.inverse_root_integral_ln(a.ln(), b.ln())
    }

    /// Same integral with limits given as logarithms.
    pub fn inverse_root_integral_ln(&self, ln_a: f64, ln_b: f64) -> Result<f64> {
        if ln_b <= ln_a {
            return Ok(0.0);
        }
        let tol = Tolerance::default();
        // split into unit pieces in ln s so the tolerance is not dominated by the far end
        let pieces = ((ln_b - ln_a).ceil() as usize).clamp(1, 4096);
        let width = (ln_b - ln_a) / pieces as f64;
        let mut total = 0.0;
        for k in 0..pieces {
            let lo = ln_a + k as f64 * width;
            let hi = if k + 1 == pieces { ln_b } else { lo + width };
            total += integrate(|u| (u - 0.5 * self.ln_g(u)).exp(), lo, hi, tol)?.value;
        }
        Ok(total)
    }
}

impl BoundaryFunction {
    /// `∫ₐ^∞ g(s)^{-1/2} ds` for `a >= 1`; infinite for recurrent boundaries.
    pub fn inverse_root_tail(&self, a: f64) -> Result<f64> {
        if self.classify() == Classification::Recurrent {
            return Ok(f64::INFINITY);
        }
        let ln_a = a.ln();
        let near = self.inverse_root_integral_ln(ln_a, ln_a + TAIL_SPLIT)?;
        let far = integrate_to_infinity(
            |u| (u - 0.5 * self.ln_g(u)).exp(),
            ln_a + TAIL_SPLIT,
            Tolerance::default(),
        )?;
        Ok(near + far.value)
    }

    /// Analytic classification, or the tail-exponent heuristic for tables.
    pub fn classify(&self) -> Classification {
        match (&self.kind, self.analytic_class()) {
            (_, Some(c)) => c,
            (BoundaryKind::Tabulated { table }, None) if table.tail_exponent() < 0.5 => {
                Classification::Transient
            }
            _ => Classification::Recurrent,
        }
    }
}

/// Width in `ln s` integrated piecewise before the mapped tail.
const TAIL_SPLIT: f64 = 40.0;

/// Partial integral values at the requested cutoffs.
#[derive(Debug, Clone, Serialize)]
pub struct IntegralTestResult {
    pub classification: Classification,
    pub heuristic: bool,
    pub cutoffs: Vec<f64>,
    /// `∫₁^T f(t) t^{-3/2} dt`.
    pub i_f_partial: Vec<f64>,
    /// `∫₁^T g(s)^{-1/2} ds`.
    pub j_g_partial: Vec<f64>,
    /// Growth of the last partial increment of `J` per unit of `ln ln T`.
    pub divergence_evidence: Option<f64>,
}

pub fn integral_test(f: &BoundaryFunction, cutoffs: &[f64]) -> Result<IntegralTestResult> {
    if cutoffs.is_empty() || cutoffs[0] < 1.0 || cutoffs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "cutoffs must be increasing and at least 1".into(),
        ));
    }
    let tol = Tolerance::default();
    let mut i_partial = Vec::with_capacity(cutoffs.len());
    let mut j_partial = Vec::with_capacity(cutoffs.len());
    let (mut i_acc, mut j_acc, mut prev) = (0.0, 0.0, 0.0_f64);
    for &c in cutoffs {
        let u = c.ln();
        i_acc += integrate(|v| (f.ln_f(v) - 0.5 * v).exp(), prev, u, tol)?.value;
        j_acc += f.inverse_root_integral_ln(prev, u)?;
        i_partial.push(i_acc);
        j_partial.push(j_acc);
        prev = u;
    }
    let divergence_evidence = match cutoffs.len() {
        n if n >= 2 && cutoffs[n - 2] > std::f64::consts::E => {
            let dl = cutoffs[n - 1].ln().ln() - cutoffs[n - 2].ln().ln();
            Some((j_partial[n - 1] - j_partial[n - 2]) / dl)
        }
        _ => None,
    };
    let (classification, heuristic) = match (f.analytic_class(), f.kind()) {
        (Some(c), _) => (c, false),
        (None, _) => (f.classify(), true),
    };
    Ok(IntegralTestResult {
        classification,
        heuristic,
        cutoffs: cutoffs.to_vec(),
        i_f_partial: i_partial,
        j_g_partial: j_partial,
        divergence_evidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verification {
    GridVerified,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridCheck {
    pub holds: bool,
    pub status: Verification,
}

impl GridCheck {
    fn new(holds: bool) -> Self {
        Self {
            holds,
            status: Verification::GridVerified,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub horizon: f64,
    pub epsilon: f64,
    /// `f(t)/√t` nonincreasing and decaying.
    pub ratio_decreasing: GridCheck,
    /// `g(t)/(t² ln t)` increasing on the last decade.
    pub mild: GridCheck,
    /// `g(t)/(t² ln^{8/5+ε} t)` increasing on the last decade.
    pub growth: GridCheck,
}

pub const GRID_PER_DECADE: usize = 512;

pub fn check_conditions(
    f: &BoundaryFunction,
    horizon: f64,
    epsilon: f64,
) -> Result<ConditionReport> {
    if !(horizon >= 1e3) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be at least 1e3, got {horizon}"
        )));
    }
    let decades = horizon.log10();
    let n = (decades * GRID_PER_DECADE as f64).ceil() as usize;
    let ln_h = horizon.ln();
    let grid: Vec<f64> = (0..=n).map(|i| ln_h * i as f64 / n as f64).collect();

    let ratios: Vec<f64> = grid.iter().map(|&u| f.ln_f(u) - 0.5 * u).collect();
    let slack = 1e-12;
    let a = ratios.windows(2).all(|w| w[1] <= w[0] + slack) && ratios[n] < ratios[0];

    let tail: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&u| u >= ln_h - std::f64::consts::LN_10)
        .collect();
    let increasing = |power: f64| {
        let vals: Vec<f64> = tail
            .iter()
            .map(|&u| f.ln_g(u) - 2.0 * u - power * u.ln())
            .collect();
        vals.windows(2).all(|w| w[1] >= w[0] - slack)
    };
    Ok(ConditionReport {
        horizon,
        epsilon,
        ratio_decreasing: GridCheck::new(a),
        mild: GridCheck::new(increasing(1.0)),
        growth: GridCheck::new(increasing(1.6 + epsilon)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn normalisation_and_floor() {
        let b = BoundaryFunction::sqrt_log(1.0, 0.5).unwrap();
        assert_eq!(b.f(1.0), 1.0);
        assert_eq!(b.f(0.0), 0.5);
        let p = BoundaryFunction::power(0.4, 0.5).unwrap();
        assert_eq!(p.f(0.1), 0.5);
        assert_relative_eq!(p.f(1.0), 1.0);
        assert_relative_eq!(p.floor_end(), 0.5f64.powf(2.5), max_relative = 1e-14);
    }

    #[test]
    fn inverse_root_tails() {
        // power β: g(x) = x^{1/β}, so ∫ₐ^∞ g^{-1/2} = a^{1-1/(2β)} / (1/(2β) - 1)
        let p = BoundaryFunction::power(0.25, 0.5).unwrap();
        assert_relative_eq!(p.inverse_root_tail(2.0).unwrap(), 0.5, max_relative = 1e-8);
        let r = BoundaryFunction::sqrt_log(1.0, 0.5).unwrap();
        assert!(r.inverse_root_tail(2.0).unwrap().is_infinite());
        let t = BoundaryFunction::sqrt_log(1.5, 0.5).unwrap();
        let tail = t.inverse_root_tail(10.0).unwrap();
        let fin = t.inverse_root_integral(10.0, 1e12).unwrap();
        assert!(tail > fin && tail.is_finite());
        assert_relative_eq!(
            tail,
            fin + t.inverse_root_tail(1e12).unwrap(),
            max_relative = 1e-8
        );
    }

    #[test]
    fn unit_gamma_matches_plain_log_form() {
        // with γ <= 1 no shift is needed and raw(t) = √t / ln(e - 1 + t)
        let b = BoundaryFunction::sqrt_log(1.0, 0.5).unwrap();
        for t in [2.0f64, 10.0, 1e3, 1e6] {
            let expect = t.sqrt() / (std::f64::consts::E - 1.0 + t).ln();
            assert_relative_eq!(b.f(t), expect, max_relative = 1e-13);
        }
    }

    #[test]
    fn steep_gamma_is_monotone() {
        assert!(BoundaryFunction::sqrt_log(1.5, 0.5).is_ok());
        assert!(BoundaryFunction::sqrt_log(3.0, 0.2).is_ok());
        assert!(BoundaryFunction::power(0.5, 0.5).is_err());
        assert!(BoundaryFunction::sqrt_log(1.0, 1.0).is_err());
    }

    #[test]
    fn inverse_asymptotics_gamma_one() {
        // g(x) ~ x² (2 ln x)²; the ratio approaches 1 slowly
        let b = BoundaryFunction::sqrt_log(1.0, 0.5).unwrap();
        let ratio = |x: f64| b.g(x) / (x * x * (2.0 * x.ln()).powi(2));
        let (r3, r4) = (ratio(1e3), ratio(1e4));
        // bisection oracle: solve √t/ln(e-1+t) = x independently
        let oracle = |x: f64| {
            let (mut lo, mut hi) = (1.0f64, 1e30f64);
            for _ in 0..300 {
                let mid = (lo * hi).sqrt();
                if mid.sqrt() / (std::f64::consts::E - 1.0 + mid).ln() < x {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            lo
        };
        assert_relative_eq!(b.g(1e3), oracle(1e3), max_relative = 1e-10);
        assert_relative_eq!(b.g(1e4), oracle(1e4), max_relative = 1e-10);
        assert!(r3 > 1.0 && r4 > 1.0 && r4 < r3, "{r3} {r4}");
    }

    #[test]
    fn negative_extension_below_floor() {
        let b = BoundaryFunction::sqrt_log(1.5, 0.5).unwrap();
        assert!(b.g(0.49) < 0.0);
        assert!(b.g(0.1) < b.g(0.3));
        assert_eq!(b.g(0.5), 0.0);
        // leaving the floor the inverse restarts at the floor end
        assert_relative_eq!(b.g(0.5 + 1e-12), b.floor_end(), max_relative = 1e-9);
    }

    #[test]
    fn log_domain_inverse_extends_past_f64() {
        let b = BoundaryFunction::sqrt_log(1.0, 0.5).unwrap();
        let ln_x = 2000.0;
        let ln_g = b.ln_g(ln_x);
        // ln g ≈ 2 ln x + 2 ln(2 ln x)
        assert!((ln_g - (2.0 * ln_x + 2.0 * (2.0 * ln_x).ln())).abs() < 0.01);
        assert_relative_eq!(b.ln_f(ln_g), ln_x, max_relative = 1e-12);
    }

    #[test]
    fn classification_rules() {
        let cut = [10.0, 1e3, 1e6];
        let r = integral_test(&BoundaryFunction::sqrt_log(1.0, 0.5).unwrap(), &cut).unwrap();
        assert_eq!(r.classification, Classification::Recurrent);
        let r = integral_test(&BoundaryFunction::sqrt_log(1.5, 0.5).unwrap(), &cut).unwrap();
        assert_eq!(r.classification, Classification::Transient);
        assert!(r.i_f_partial.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn power_partial_integral_matches_antiderivative() {
        let b = BoundaryFunction::power(0.4, 0.5).unwrap();
        let r = integral_test(&b, &[1e2, 1e4, 1e6]).unwrap();
        assert_eq!(r.classification, Classification::Transient);
        let closed = |t: f64| (1.0 - t.powf(-0.1)) / 0.1;
        for (c, v) in r.cutoffs.iter().zip(&r.i_f_partial) {
            assert_relative_eq!(*v, closed(*c), max_relative = 1e-8);
        }
        // g(x) = x^{2.5}: ∫₁^T x^{-1.25} = 4(1 - T^{-1/4})
        let j = r.j_g_partial[2];
        assert_relative_eq!(j, 4.0 * (1.0 - 1e6f64.powf(-0.25)), max_relative = 1e-8);
    }

    #[test]
    fn condition_reports() {
        let b = BoundaryFunction::sqrt_log(1.0, 0.5).unwrap();
        // the log-log corrections only settle far out
        let r = check_conditions(&b, 1e6, 0.1).unwrap();
        assert!(r.ratio_decreasing.holds && r.mild.holds && !r.growth.holds);
        let r = check_conditions(&b, 1e30, 0.1).unwrap();
        assert!(
            r.ratio_decreasing.holds && r.mild.holds && r.growth.holds,
            "{r:?}"
        );
        let p = BoundaryFunction::power(0.4, 0.5).unwrap();
        let r = check_conditions(&p, 1e6, 0.1).unwrap();
        assert!(
            r.ratio_decreasing.holds && r.mild.holds && r.growth.holds,
            "{r:?}"
        );
        let h = BoundaryFunction::sqrt_log(0.5, 0.5).unwrap();
        let r = check_conditions(&h, 1e6, 0.4).unwrap();
        assert!(!r.growth.holds);
        assert!(check_conditions(&b, 10.0, 0.1).is_err());
    }

    #[test]
    fn table_round_trip_and_rejection() {
        let csv = "t,f\n0,0.5\n0.2,0.5\n1,1\n4,2\n16,4\n";
        let t = Table::from_reader(csv.as_bytes()).unwrap();
        let b = BoundaryFunction::tabulated(t).unwrap();
        assert_relative_eq!(b.g(1.5), 2.5);
        assert_relative_eq!(b.f(2.5), 1.5);
        assert_relative_eq!(b.floor_end(), 0.2);
        // the last segment has log-log slope 1/2, extrapolated as a power law
        assert_relative_eq!(b.f(64.0), 8.0, max_relative = 1e-12);
        assert!(b.g(0.4) < 0.0);
        let bad = "0,0.5\n1,1\n2,0.9\n";
        assert!(Table::from_reader(bad.as_bytes()).is_err());
        let unnormalised = "0,0.5\n1,0.9\n2,2\n";
        let t = Table::from_reader(unnormalised.as_bytes()).unwrap();
        assert!(BoundaryFunction::tabulated(t).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_sqrt_log(gamma in 0.3f64..3.0, f0 in 0.05f64..0.95, ln_t in -3.0f64..30.0) {
            let b = BoundaryFunction::sqrt_log(gamma, f0).unwrap();
            let t = ln_t.exp();
            prop_assume!(t > b.floor_end() * (1.0 + 1e-9));
            let back = b.g(b.f(t));
            prop_assert!((back - t).abs() / t <= 1e-10, "t={t} back={back}");
        }

        #[test]
        fn round_trip_power(beta in 0.05f64..0.49, ln_t in -3.0f64..30.0) {
            let b = BoundaryFunction::power(beta, 0.5).unwrap();
            let t = ln_t.exp();
            prop_assume!(t > b.floor_end() * (1.0 + 1e-9));
            prop_assert!((b.g(b.f(t)) - t).abs() / t <= 1e-10);
        }

        #[test]
        fn g_increasing(gamma in 0.3f64..3.0, x in 0.01f64..50.0, dx in 1e-6f64..5.0) {
            let b = BoundaryFunction::sqrt_log(gamma, 0.5).unwrap();
            prop_assert!(b.g(x + dx) > b.g(x));
        }
    }
}
