//! Exact conditional splitting of τ increments ("Lévy bridge" draws).
//!
//! Given `τ_{u₁+u₂} - τ_0 = x`, the left piece `τ_{u₁}` is drawn exactly. This
//! refines paths with common random numbers and locates individual big jumps.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Inverse Gaussian `IG(μ, λ)` (Michael–Schucany–Haas, cancellation-free form).
pub fn sample_inverse_gaussian<R: Rng + ?Sized>(mu: f64, lambda: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let r = mu * z * z / (2.0 * lambda);
    let x = mu / (1.0 + r + (r * (r + 2.0)).sqrt());
    let u: f64 = rng.random();
    if u * (mu + x) <= mu {
        x
    } else {
        mu * mu / x
    }
}

/// Draws `τ_{u₁}` given `τ_{u₁+u₂} = x`.
///
/// Writing `τ_{u₂}' = v² τ_{u₁}`, the law of `v²` is a two-component mixture of
/// reciprocal inverse Gaussians with weights proportional to `1/u₁` and `1/u₂`.
pub fn split_increment<R: Rng + ?Sized>(u1: f64, u2: f64, x: f64, rng: &mut R) -> f64 {
    if u1 <= 0.0 || x <= 0.0 {
        return 0.0;
    }
    if u2 <= 0.0 {
        return x;
    }
    let alpha = u1 * u1 / (2.0 * x);
    let beta = u2 * u2 / (2.0 * x);
    let pick: f64 = rng.random();
    let v2 = if pick * (u1 + u2) < u2 {
        1.0 / sample_inverse_gaussian((alpha / beta).sqrt(), 2.0 * alpha, rng)
    } else {
        sample_inverse_gaussian((beta / alpha).sqrt(), 2.0 * beta, rng)
    };
    let left = x / (1.0 + v2);
    left.clamp(0.0, x)
}

/// A located jump: local time, size, and the value of τ just before it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocatedJump {
    pub local_time: f64,
    pub size: f64,
    pub before: f64,
}

const LOCATE_DEPTH: u32 = 40;

/// Finds the jumps larger than `threshold` inside the cell `[lo, hi]` whose
/// increment is `inc` and whose left value is `base`, by recursive bisection.
/// Appends them to `out` in increasing local time.
pub fn locate_jumps<R: Rng + ?Sized>(
    lo: f64,
    hi: f64,
    base: f64,
    inc: f64,
    threshold: f64,
    rng: &mut R,
    out: &mut Vec<LocatedJump>,
) {
    if !(inc > threshold) {
        return;
    }
    // (lo, hi, base, inc, depth); right halves pushed first so left comes out first
    let mut stack = vec![(lo, hi, base, inc, 0u32)];
    while let Some((a, b, v, x, d)) = stack.pop() {
        if d >= LOCATE_DEPTH {
            out.push(LocatedJump {
                local_time: 0.5 * (a + b),
                size: x,
                before: v,
            });
            continue;
        }
        let m = 0.5 * (a + b);
        let left = split_increment(m - a, b - m, x, rng);
        let right = x - left;
        if right > threshold {
            stack.push((m, b, v + left, right, d + 1));
        }
        if left > threshold {
            stack.push((a, m, v, left, d + 1));
        }
    }
}
