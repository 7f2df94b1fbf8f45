//! Adaptive Gauss–Kronrod quadrature (21-point Kronrod rule, 10-point Gauss
//! embedded), global bisection of the worst subinterval.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_958_109_831,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

// Gauss weights for the odd-indexed Kronrod nodes 1, 3, 5, 7, 9.
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

/// Absolute and relative error targets.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-10,
            rel: 1e-8,
            max_intervals: 20_000,
        }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod21<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Piece {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut res_k = fc * WGK[10];
    let mut res_abs = res_k.abs();
    let mut res_g = 0.0;
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Piece {
        lo,
        hi,
        value,
        error,
    }
}

/// Integrate `f` over the finite interval `[lo, hi]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<Estimate> {
    if lo == hi {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "finite limits required, got [{lo}, {hi}]"
        )));
    }
    let first = kronrod21(&f, lo, hi);
    if !first.value.is_finite() {
        return Err(Error::Quadrature {
            lo,
            hi,
            err: f64::INFINITY,
        });
    }
    let mut heap = BinaryHeap::new();
    let mut total = first.value;
    let mut err = first.error;
    let mut evals = 21;
    heap.push(first);
    while err > tol.abs.max(tol.rel * total.abs()) {
        if heap.len() >= tol.max_intervals {
            return Err(Error::Quadrature { lo, hi, err });
        }
        let worst = heap.pop().expect("nonempty heap");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // interval no longer divisible in floating point
            return Err(Error::Quadrature { lo, hi, err });
        }
        let left = kronrod21(&f, worst.lo, mid);
        let right = kronrod21(&f, mid, worst.hi);
        evals += 42;
        total += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        if !total.is_finite() {
            return Err(Error::Quadrature {
                lo,
                hi,
                err: f64::INFINITY,
            });
        }
        heap.push(left);
        heap.push(right);
        // the running error drifts through cancellation; resum occasionally
        if heap.len() % 64 == 0 {
            err = heap.iter().map(|p| p.error).sum();
            total = heap.iter().map(|p| p.value).sum();
        }
    }
    let value = heap.iter().map(|p| p.value).sum();
    let error = heap.iter().map(|p| p.error).sum();
    Ok(Estimate {
        value,
        error,
        evaluations: evals,
    })
}

/// Integrate `f` over `[lo, ∞)` through `x = lo + c((1-z)^{-2} - 1)`, `c = max(1, |lo|)`.
///
/// The map turns integrands decaying like `x^{-3/2}` into bounded ones.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, lo: f64, tol: Tolerance) -> Result<Estimate> {
    let c = lo.abs().max(1.0);
    let mapped = |z: f64| {
        let w = 1.0 - z;
        if w <= 0.0 {
            return 0.0;
        }
        let x = lo + c * (1.0 / (w * w) - 1.0);
        let v = f(x) * 2.0 * c / (w * w * w);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(mapped, 0.0, 1.0, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exact() {
        let est = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, Tolerance::default()).unwrap();
        assert_relative_eq!(est.value, 0.0, epsilon = 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        let est = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, Tolerance::default()).unwrap();
        assert_relative_eq!(est.value, 2.0, max_relative = 1e-8);
    }

    #[test]
    fn heavy_tail() {
        let est = integrate_to_infinity(|x: f64| x.powf(-1.5), 1.0, Tolerance::default()).unwrap();
        assert_relative_eq!(est.value, 2.0, max_relative = 1e-9);
        let est = integrate_to_infinity(|x: f64| (-x).exp(), 0.0, Tolerance::default()).unwrap();
        assert_relative_eq!(est.value, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn nonintegrable_reports_failure() {
        let tol = Tolerance {
            max_intervals: 200,
            ..Tolerance::default()
        };
        assert!(integrate(|x: f64| 1.0 / x, 0.0, 1.0, tol).is_err());
    }
}
