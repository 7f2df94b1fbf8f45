//! The limiting law `Q`: clocks, conditioned subordinator skeletons, excursion
//! fills, the Bessel(3) tail, and pre-limit marginals of `τ_h`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryFunction, Classification};
use crate::bridge::LocatedJump;
use crate::ensemble::{
    advance, record_kills, simulate, start_path, ConstraintGrid, Ensemble, PathStreams,
};
use crate::error::{Error, Result};
use crate::parallel::map_chunks;
use crate::rng::{Lane, Seed};
use crate::stable::K;
use crate::survival::{default_grid, fmt, McConfig, SurvivalEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

/// Survival function of the limit clock beyond the Monte Carlo table,
/// `P(𝔠 > s) = 1 − exp(−2K∫_s^∞ g^{-1/2})`, on nodes in `ln s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClockTail {
    ln_s: Vec<f64>,
    survival: Vec<f64>,
}

const LN_MAX: f64 = 709.0;
const TAIL_NODES: usize = 400;

impl ClockTail {
    fn new(f: &BoundaryFunction, from: f64) -> Result<Self> {
        let (a, b) = (from.ln(), LN_MAX);
        // nodes dense near `from`, where the survival changes fastest
        let ln_s: Vec<f64> = (0..TAIL_NODES)
            .map(|k| a + (b - a) * (k as f64 / (TAIL_NODES - 1) as f64).powi(3))
            .collect();
        let mut tail = vec![0.0; TAIL_NODES];
        tail[TAIL_NODES - 1] = f.inverse_root_tail(b.exp())?;
        for k in (0..TAIL_NODES - 1).rev() {
            tail[k] = tail[k + 1] + f.inverse_root_integral_ln(ln_s[k], ln_s[k + 1])?;
        }
        let survival = tail.iter().map(|&j| -(-2.0 * K * j).exp_m1()).collect();
        Ok(Self { ln_s, survival })
    }

    /// Inverts the survival function; `∞` beyond the floating-point range.
    fn quantile(&self, p: f64) -> f64 {
        let last = self.survival.len() - 1;
        if p < self.survival[last] {
            return f64::INFINITY;
        }
        let i = self.survival.partition_point(|&q| q > p).clamp(1, last);
        let (p0, p1) = (self.survival[i - 1], self.survival[i]);
        let w = if p0 > p1 {
            ((p0 / p).ln() / (p0 / p1).ln()).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.ln_s[i - 1] + w * (self.ln_s[i] - self.ln_s[i - 1])).exp()
    }

    fn survival_at(&self, s: f64) -> f64 {
        let x = s.ln();
        if x >= LN_MAX {
            return self.survival[self.survival.len() - 1];
        }
        let i = self
            .ln_s
            .partition_point(|&u| u <= x)
            .clamp(1, self.ln_s.len() - 1);
        let w = (x - self.ln_s[i - 1]) / (self.ln_s[i] - self.ln_s[i - 1]);
        let (p0, p1) = (self.survival[i - 1].ln(), self.survival[i].ln());
        (p0 + w * (p1 - p0)).exp()
    }
}

/// Law of the clock `𝔠_t` (density `φ(s)/Φ(t)` on `[0, t]`) or of the limit clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockDistribution {
    pub horizon: Horizon,
    pub s: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    /// Normaliser: `Φ̂(t)`, or `Φ̂(∞)` for the limit clock.
    pub big_phi: f64,
    tail: Option<ClockTail>,
}

impl ClockDistribution {
    /// Builds the clock from tabulated survival values `φ̂` at `s` (positive,
    /// increasing); `φ(0) = 1` is prepended.
    ///
    /// The limit clock closes the table at its last node `T` with the renewal
    /// solution, `Φ(∞) = Φ̂(T)·exp(2K∫_T^∞ g^{-1/2})`, neglecting `ρ` beyond `T`.
    pub fn new(f: &BoundaryFunction, s: &[f64], phi: &[f64], horizon: Horizon) -> Result<Self> {
        if s.is_empty()
            || s.len() != phi.len()
            || !(s[0] > 0.0)
            || s.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::InvalidParameter(
                "clock table needs positive increasing nodes".into(),
            ));
        }
        if phi.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter(
                "survival values must lie in [0, 1]".into(),
            ));
        }
        let mut xs = vec![0.0];
        let mut ys = vec![1.0];
        let end = match horizon {
            Horizon::Finite(t) => {
                if !(t > 0.0 && t <= s[s.len() - 1]) {
                    return Err(Error::InvalidParameter(format!(
                        "clock horizon {t} is not covered by the table"
                    )));
                }
                t
            }
            Horizon::Infinite => {
                if f.classify() == Classification::Recurrent {
                    return Err(Error::InvalidParameter(
                        "the limit clock does not exist for a recurrent boundary (Phi(inf) = inf)"
                            .into(),
                    ));
                }
                s[s.len() - 1]
            }
        };
        for (&x, &p) in s.iter().zip(phi) {
            if x < end {
                xs.push(x);
                ys.push(p);
            }
        }
        let last = interpolate(s, phi, end);
        xs.push(end);
        ys.push(last);
        let mut cum = vec![0.0];
        for k in 1..xs.len() {
            cum.push(cum[k - 1] + 0.5 * (xs[k] - xs[k - 1]) * (ys[k] + ys[k - 1]));
        }
        let big_phi_t = cum[cum.len() - 1];
        if !(big_phi_t > 0.0) {
            return Err(Error::InvalidParameter("clock table has no mass".into()));
        }
        let (big_phi, tail) = match horizon {
            Horizon::Finite(_) => (big_phi_t, None),
            Horizon::Infinite => {
                if !(end >= 1.0 && end > f.f0()) {
                    return Err(Error::InvalidParameter(
                        "limit clock table must extend beyond t = 1".into(),
                    ));
                }
                let tail = ClockTail::new(f, end)?;
                let mass_beyond = tail.survival[0];
                (big_phi_t / (1.0 - mass_beyond), Some(tail))
            }
        };
        Ok(Self {
            horizon,
            density: ys.iter().map(|p| p / big_phi).collect(),
            cdf: cum.iter().map(|c| c / big_phi).collect(),
            s: xs,
            big_phi,
            tail,
        })
    }

    /// Clock built from an ensemble run at `nodes` (direct bracket points).
    pub fn estimate(
        f: &BoundaryFunction,
        nodes: &[f64],
        horizon: Horizon,
        grid_points: usize,
        cfg: &McConfig,
    ) -> Result<Self> {
        let grid = default_grid(f, nodes, grid_points)?;
        let ens = Ensemble {
            f,
            grid: &grid,
            times: nodes,
            n_paths: cfg.n_paths,
            seed: cfg.seed,
            workers: cfg.workers,
            jumps: false,
        };
        let spec = crate::survival::GridSpec::of(&grid);
        let phi: Vec<f64> = ens
            .run()?
            .iter()
            .map(|s| SurvivalEstimate::direct(s, spec).point)
            .collect();
        Self::new(f, nodes, &phi, horizon)
    }

    /// `P(𝔠 <= s)`.
    pub fn cdf_at(&self, s: f64) -> f64 {
        let end = self.s[self.s.len() - 1];
        if s <= 0.0 {
            return 0.0;
        }
        if s >= end {
            return match &self.tail {
                Some(tail) => 1.0 - tail.survival_at(s),
                None => 1.0,
            };
        }
        let i = self
            .s
            .partition_point(|&x| x <= s)
            .clamp(1, self.s.len() - 1);
        let dx = self.s[i] - self.s[i - 1];
        let w = (s - self.s[i - 1]) / dx;
        let (d0, d1) = (self.density[i - 1], self.density[i]);
        self.cdf[i - 1] + dx * (d0 * w + 0.5 * (d1 - d0) * w * w)
    }

    /// Mass of the tabulated part, `1` for finite horizons.
    pub fn table_mass(&self) -> f64 {
        self.cdf[self.cdf.len() - 1]
    }

    /// Total mass: table plus analytic tail.
    pub fn total_mass(&self) -> f64 {
        self.table_mass() + self.tail.as_ref().map_or(0.0, |t| t.survival[0])
    }

    /// Trapezoid mean of the tabulated density (finite horizons).
    pub fn mean(&self) -> f64 {
        let mut m = 0.0;
        for k in 1..self.s.len() {
            m += 0.5
                * (self.s[k] - self.s[k - 1])
                * (self.s[k] * self.density[k] + self.s[k - 1] * self.density[k - 1]);
        }
        m
    }

    /// Inverse-CDF draw for the piecewise-linear density; limit-clock draws beyond the
    /// floating-point range come back as `∞`.
    pub fn quantile(&self, u: f64) -> f64 {
        let top = self.table_mass();
        if u >= top {
            return match &self.tail {
                Some(tail) => tail.quantile(1.0 - u).max(self.s[self.s.len() - 1]),
                None => self.s[self.s.len() - 1],
            };
        }
        let i = self
            .cdf
            .partition_point(|&c| c <= u)
            .clamp(1, self.cdf.len() - 1);
        // the density is linear on the cell, so the CDF is quadratic there
        let dx = self.s[i] - self.s[i - 1];
        let (a, b) = (
            0.5 * (self.density[i] - self.density[i - 1]) * dx,
            self.density[i - 1] * dx,
        );
        let r = (u - self.cdf[i - 1]).max(0.0);
        let disc = (b * b + 4.0 * a * r).max(0.0).sqrt();
        let w = if b + disc > 0.0 {
            (2.0 * r / (b + disc)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.s[i - 1] + w * dx
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random())
    }
}

pub fn sample_clock<R: Rng + ?Sized>(dist: &ClockDistribution, rng: &mut R) -> f64 {
    dist.sample(rng)
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + w * (ys[i] - ys[i - 1])
}

/// A τ path on `[0, x]` accepted on the lower-bracket event, with its jumps
/// above the fill threshold located.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub x: f64,
    pub grid: ConstraintGrid,
    pub values: Vec<f64>,
    pub jumps: Vec<LocatedJump>,
    pub attempts: u64,
}

impl Skeleton {
    /// `τ(s_i) > g(s_{i+1})` for every cell.
    pub fn satisfies_lower_bracket(&self) -> bool {
        (0..self.values.len() - 1).all(|i| self.values[i] > self.grid.g_at(i + 1))
    }

    /// Time at which the skeleton reaches local time `x`.
    pub fn end_time(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Local time `L_u` of the reconstruction: the right inverse of the
    /// skeleton, flat across every located jump.
    pub fn local_time_at(&self, u: f64) -> f64 {
        let s = self.grid.points();
        let i = self.values.partition_point(|&v| v <= u);
        if i == 0 {
            return 0.0;
        }
        if i >= self.values.len() {
            return self.x;
        }
        // u lies in (τ(s_{i-1}), τ(s_i)]; knots of the cell including jumps
        let (mut s0, mut v0) = (s[i - 1], self.values[i - 1]);
        for j in self
            .jumps
            .iter()
            .filter(|j| j.local_time > s[i - 1] && j.local_time <= s[i])
        {
            if u <= j.before {
                return s0 + (j.local_time - s0) * frac(u, v0, j.before);
            }
            if u <= j.before + j.size {
                return j.local_time;
            }
            s0 = j.local_time;
            v0 = j.before + j.size;
        }
        s0 + (s[i] - s0) * frac(u, v0, self.values[i])
    }
}

fn frac(u: f64, a: f64, b: f64) -> f64 {
    if b > a {
        ((u - a) / (b - a)).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Rejection sampling of a skeleton on the lower-bracket event, which implies
/// the true event `O_x`. Attempt `k` draws from stream `(seed, k)`.
pub fn sample_conditioned_skeleton(
    f: &BoundaryFunction,
    x: f64,
    grid_points: usize,
    fill_threshold: f64,
    seed: Seed,
    max_attempts: u64,
) -> Result<Skeleton> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "clock value must be positive and finite, got {x}"
        )));
    }
    let grid = ConstraintGrid::geometric(f, x, grid_points, &[])?;
    let last = grid.len() - 1;
    for attempt in 0..max_attempts {
        let mut streams = PathStreams::new(seed, attempt);
        let mut rec = start_path(&grid, &mut streams, fill_threshold, true);
        let mut ok = true;
        for i in 1..=last {
            // lower bracket on the cell ending at s_i
            if rec.value(i - 1) <= grid.g_at(i) {
                ok = false;
                break;
            }
            advance(&grid, &mut rec, i, &mut streams, fill_threshold, false);
        }
        if ok {
            return Ok(Skeleton {
                x,
                values: rec.values,
                jumps: rec.jumps,
                grid,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::Budget(format!(
        "no skeleton accepted in {max_attempts} attempts at x = {x}; acceptance rate below {:.3e}",
        1.0 / max_attempts as f64
    )))
}

/// A normalised Brownian excursion on `m` steps: Vervaat transform of a bridge.
pub fn sample_unit_excursion<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    let m = m.max(2);
    let sd = (1.0 / m as f64).sqrt();
    let mut w = Vec::with_capacity(m + 1);
    w.push(0.0);
    for k in 0..m {
        let z: f64 = StandardNormal.sample(rng);
        w.push(w[k] + sd * z);
    }
    let end = w[m];
    let bridge: Vec<f64> = (0..m).map(|k| w[k] - end * k as f64 / m as f64).collect();
    let argmin = (0..m)
        .min_by(|&a, &b| bridge[a].total_cmp(&bridge[b]))
        .unwrap_or(0);
    let low = bridge[argmin];
    (0..=m)
        .map(|j| {
            if j == 0 || j == m {
                0.0
            } else {
                bridge[(argmin + j) % m] - low
            }
        })
        .collect()
}

/// One filled excursion; `values[k]` is the path at `start + k·duration/(len−1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionFill {
    pub start: f64,
    pub duration: f64,
    pub sign: f64,
    pub values: Vec<f64>,
}

/// Fills every located jump of length `ζ` with a signed excursion scaled by
/// `√ζ` on `⌈ζ/dt⌉` steps (at most `max_points`).
pub fn fill_excursions<R: Rng + ?Sized>(
    jumps: &[LocatedJump],
    dt: f64,
    max_points: usize,
    rng: &mut R,
) -> Vec<ExcursionFill> {
    jumps
        .iter()
        .map(|j| {
            let m = ((j.size / dt).ceil() as usize).clamp(2, max_points.max(2));
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let scale = j.size.sqrt() * sign;
            let values = sample_unit_excursion(m, rng)
                .into_iter()
                .map(|v| v * scale)
                .collect();
            ExcursionFill {
                start: j.before,
                duration: j.size,
                sign,
                values,
            }
        })
        .collect()
}

/// Norm of a three-dimensional Brownian motion at `k·dt'`, `dt' = duration/⌈duration/dt⌉`.
pub fn sample_bessel3<R: Rng + ?Sized>(duration: f64, dt: f64, rng: &mut R) -> Vec<f64> {
    let m = ((duration / dt).ceil() as usize).max(1);
    let sd = (duration / m as f64).sqrt();
    let mut p = [0.0f64; 3];
    let mut out = Vec::with_capacity(m + 1);
    out.push(0.0);
    for _ in 0..m {
        for c in &mut p {
            let z: f64 = StandardNormal.sample(rng);
            *c += sd * z;
        }
        out.push((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
    }
    out
}

/// Budgets for assembling one transient path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathBudgets {
    pub grid_points: usize,
    pub max_attempts: u64,
    /// Largest clock value for which a skeleton is attempted.
    pub max_clock: f64,
    pub dt: f64,
    /// Jumps above this are filled with excursions; defaults to `4·dt`.
    pub fill_threshold: f64,
    pub max_fill_points: usize,
    pub tail_duration: f64,
}

impl PathBudgets {
    pub fn new(dt: f64) -> Self {
        Self {
            grid_points: 256,
            max_attempts: 2_000_000,
            max_clock: 200.0,
            dt,
            fill_threshold: 4.0 * dt,
            max_fill_points: 4096,
            tail_duration: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitPathSample {
    pub clock: f64,
    pub skeleton: Skeleton,
    pub excursions: Vec<ExcursionFill>,
    /// Sign `ϖ` of the Bessel tail.
    pub sign: f64,
    /// Time `τ_x` at which the tail starts.
    pub tail_start: f64,
    pub tail_dt: f64,
    /// `ϖ·B³` at `tail_start + k·tail_dt`.
    pub bessel_tail: Vec<f64>,
}

impl LimitPathSample {
    /// Smallest `|Y|` on the tail at times after `tail_start + after`.
    pub fn tail_min_after(&self, after: f64) -> f64 {
        let k0 = (after / self.tail_dt).ceil() as usize;
        self.bessel_tail
            .iter()
            .skip(k0)
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// `L_{g(s_i)} <= s_i` at every skeleton grid point with `g(s_i) > 0`.
    pub fn constraint_holds(&self) -> bool {
        let g = &self.skeleton.grid;
        (1..g.len())
            .filter(|&i| g.g_at(i) > 0.0)
            .all(|i| self.skeleton.local_time_at(g.g_at(i)) <= g.points()[i])
    }

    /// Rows `(time, value, segment)` of the assembled path.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time", "value", "segment"])?;
        for (k, e) in self.excursions.iter().enumerate() {
            let tag = format!("excursion_{k}");
            let step = e.duration / (e.values.len() - 1) as f64;
            for (i, v) in e.values.iter().enumerate() {
                out.write_record([fmt(e.start + i as f64 * step), fmt(*v), tag.clone()])?;
            }
        }
        for (i, v) in self.bessel_tail.iter().enumerate() {
            out.write_record([
                fmt(self.tail_start + i as f64 * self.tail_dt),
                fmt(*v),
                "bessel_tail".to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A transient sample, or the clock alone when its skeleton is beyond budget.
#[derive(Debug, Clone, PartialEq)]
pub enum TransientOutcome {
    Path(Box<LimitPathSample>),
    OverBudget { clock: f64 },
}

impl TransientOutcome {
    pub fn clock(&self) -> f64 {
        match self {
            TransientOutcome::Path(p) => p.clock,
            TransientOutcome::OverBudget { clock } => *clock,
        }
    }
}

/// Clock, conditioned skeleton, excursion fills, sign and Bessel(3) tail for
/// sample `index`.
pub fn sample_transient_path(
    f: &BoundaryFunction,
    clock: &ClockDistribution,
    budgets: &PathBudgets,
    seed: Seed,
    index: u64,
) -> Result<TransientOutcome> {
    if f.classify() != Classification::Transient {
        return Err(Error::InvalidParameter(
            "transient paths need a transient boundary".into(),
        ));
    }
    let mut rng = seed.stream(index, Lane::Extra);
    let x = clock.sample(&mut rng);
    if !(x <= budgets.max_clock) {
        return Ok(TransientOutcome::OverBudget { clock: x });
    }
    let skeleton = sample_conditioned_skeleton(
        f,
        x,
        budgets.grid_points,
        budgets.fill_threshold,
        seed.derive(index),
        budgets.max_attempts,
    )?;
    let mut fill = seed.stream(index, Lane::Fill);
    let excursions = fill_excursions(
        &skeleton.jumps,
        budgets.dt,
        budgets.max_fill_points,
        &mut fill,
    );
    let sign = if fill.random::<bool>() { 1.0 } else { -1.0 };
    let tail = sample_bessel3(budgets.tail_duration, budgets.dt, &mut fill);
    let m = tail.len() - 1;
    Ok(TransientOutcome::Path(Box::new(LimitPathSample {
        clock: x,
        tail_start: skeleton.end_time(),
        skeleton,
        excursions,
        sign,
        tail_dt: budgets.tail_duration / m as f64,
        bessel_tail: tail.into_iter().map(|v| sign * v).collect(),
    })))
}

/// Bins of the pre-limit law of `τ_h` given `O_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QBin {
    pub y_lo: f64,
    pub y_hi: f64,
    /// `P̂(τ_h ∈ bin | O_t) / P̂(τ_h ∈ bin; O_h)`.
    pub q_hat: f64,
    pub stderr: f64,
    /// `P̂(τ_h ∈ bin | O_t)`.
    pub q_mass: f64,
    /// `P̂(τ_h ∈ bin; O_h)`.
    pub p_mass: f64,
    /// Weighted survivors to `t` in the bin.
    pub survivors: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMarginalEstimate {
    pub h: f64,
    pub t_prelimit: f64,
    pub n_paths: u64,
    pub bins: Vec<QBin>,
    pub survival_h: f64,
    pub survival_t: f64,
    /// Total-variation change of the bin masses on the last doubling of `t`.
    pub tv_change: Option<f64>,
    pub converged: bool,
}

impl QMarginalEstimate {
    /// Adjacent-bin monotonicity up to `k` combined standard errors.
    pub fn monotone_within(&self, k: f64) -> bool {
        self.bins
            .windows(2)
            .all(|w| w[1].q_hat >= w[0].q_hat - k * w[0].stderr.hypot(w[1].stderr))
    }

    /// `Q̂(τ_h > y)` for a bin edge `y`.
    pub fn mass_above(&self, y: f64) -> f64 {
        self.bins
            .iter()
            .filter(|b| b.y_lo >= y * (1.0 - 1e-12))
            .map(|b| b.q_mass)
            .sum()
    }

    /// `P̂(τ_h > y; O_h)` for a bin edge `y`.
    pub fn restricted_mass_above(&self, y: f64) -> f64 {
        self.bins
            .iter()
            .filter(|b| b.y_lo >= y * (1.0 - 1e-12))
            .map(|b| b.p_mass)
            .sum()
    }

    /// Binned mass of `P(τ_h ∈ dy; O_h)` above `y0` against the `y^{-3/2}`
    /// density envelope fitted on the bin starting at `y0`.
    pub fn tail_envelope_ratio(&self, y0: f64) -> Result<f64> {
        let b = self
            .bins
            .iter()
            .find(|b| (b.y_lo - y0).abs() <= 1e-12 * y0 && b.y_hi.is_finite())
            .ok_or_else(|| Error::InvalidParameter(format!("no finite bin starts at {y0}")))?;
        if !(b.p_mass > 0.0) {
            return Err(Error::Insufficient(format!(
                "no restricted mass in the bin at {y0}"
            )));
        }
        let c = b.p_mass / (2.0 * (b.y_lo.powf(-0.5) - b.y_hi.powf(-0.5)));
        let envelope = 2.0 * c * y0.powf(-0.5);
        Ok(self.restricted_mass_above(y0) / envelope)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["y_lo", "y_hi", "q_hat", "stderr", "q_mass", "p_mass"])?;
        for b in &self.bins {
            out.write_record([
                fmt(b.y_lo),
                fmt(b.y_hi),
                fmt(b.q_hat),
                fmt(b.stderr),
                fmt(b.q_mass),
                fmt(b.p_mass),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Options for [`estimate_q_marginal`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMarginalConfig {
    pub h: f64,
    /// Bin edges; a final `(last, ∞)` bin is always added.
    pub y_edges: Vec<f64>,
    /// Pre-limit horizon; `20h` when absent.
    pub t_prelimit: Option<f64>,
    /// Doublings of `t` allowed while the bin masses move by 2% or more.
    pub max_doublings: u32,
    pub grid_points: usize,
    /// Weighted survivors to `t` required overall.
    pub min_survivors: f64,
}

impl QMarginalConfig {
    /// Edges `g(h)·20^{j/4}`, `j = 0..=8`, so that `20g(h)` is an edge.
    pub fn new(f: &BoundaryFunction, h: f64) -> Self {
        let base = f.g(h).max(0.0);
        Self {
            h,
            y_edges: (0..=8).map(|j| base * 20f64.powf(j as f64 / 4.0)).collect(),
            t_prelimit: None,
            max_doublings: 0,
            grid_points: 512,
            min_survivors: 20.0,
        }
    }
}

pub const TV_TOLERANCE: f64 = 0.02;

/// Pre-limit estimate of `q_h` from paths surviving to `t` (point bracket).
pub fn estimate_q_marginal(
    f: &BoundaryFunction,
    qc: &QMarginalConfig,
    cfg: &McConfig,
) -> Result<QMarginalEstimate> {
    if f.classify() != Classification::Recurrent {
        return Err(Error::InvalidParameter(
            "q-marginals are defined for recurrent boundaries".into(),
        ));
    }
    let h = qc.h;
    let floor = f.g(h).max(0.0);
    if !(h > 0.0)
        || qc.y_edges.len() < 2
        || qc.y_edges.windows(2).any(|w| !(w[1] > w[0]))
        || qc.y_edges[0] < floor * (1.0 - 1e-12)
    {
        return Err(Error::InvalidParameter(format!(
            "y edges must increase from g(h) ∨ 0 = {floor}"
        )));
    }
    let t0 = qc.t_prelimit.unwrap_or(20.0 * h);
    if !(t0 > h) {
        return Err(Error::InvalidParameter(
            "pre-limit horizon must exceed h".into(),
        ));
    }
    let times: Vec<f64> = (0..=qc.max_doublings)
        .map(|k| t0 * 2f64.powi(k as i32))
        .collect();
    let mut all = vec![h];
    all.extend(&times);
    let grid = default_grid(f, &all, qc.grid_points)?;
    let ih = grid.index_of(h).expect("h is a grid point");
    let nb = qc.y_edges.len();
    let nt = times.len();
    // per bin: [P mass, then per t: Q weight sum and its square sum]
    let width = 1 + 2 * nt;
    let parts = map_chunks(cfg.n_paths, cfg.workers, |range| {
        let mut acc = vec![0.0; nb * width + 1 + nt];
        for idx in range {
            let rec = simulate(&grid, cfg.seed, idx, f64::INFINITY, false, true);
            let k = record_kills(&grid, f, &rec);
            let wh = 0.5 * (f64::from(k.alive_lower(h) as u8) + f64::from(k.alive_upper(h) as u8));
            if wh == 0.0 {
                continue;
            }
            let y = rec.value(ih);
            let bin = qc.y_edges.partition_point(|&e| e <= y);
            if bin == 0 {
                continue;
            }
            let b = (bin - 1) * width;
            acc[b] += wh;
            acc[nb * width] += wh;
            for (j, &t) in times.iter().enumerate() {
                let wt =
                    0.5 * (f64::from(k.alive_lower(t) as u8) + f64::from(k.alive_upper(t) as u8));
                acc[b + 1 + 2 * j] += wt;
                acc[b + 2 + 2 * j] += wt * wt;
                acc[nb * width + 1 + j] += wt;
            }
        }
        acc
    })?;
    let mut tot = vec![0.0; nb * width + 1 + nt];
    for p in &parts {
        for (a, b) in tot.iter_mut().zip(p) {
            *a += b;
        }
    }
    let n = cfg.n_paths as f64;
    let survival_h = tot[nb * width] / n;
    let build = |j: usize| -> Result<(Vec<QBin>, f64)> {
        let surv_t = tot[nb * width + 1 + j];
        if surv_t <= 0.0 {
            return Err(Error::Insufficient(format!(
                "no path survived to t = {}",
                times[j]
            )));
        }
        let p_t = surv_t / n;
        let mut bins = Vec::with_capacity(nb);
        for bin in 0..nb {
            let b = bin * width;
            let (ph, qt) = (tot[b], tot[b + 1 + 2 * j]);
            let r = if ph > 0.0 { qt / ph } else { 0.0 };
            let q_hat = r / p_t;
            // an empty bin gets the error of a single survivor
            let qe = qt.max(1.0);
            let re = if ph > 0.0 { qe / ph } else { f64::INFINITY };
            let stderr = re / p_t * ((1.0 - re).max(0.0) / qe + (1.0 - p_t) / surv_t).sqrt();
            bins.push(QBin {
                y_lo: qc.y_edges[bin],
                y_hi: qc.y_edges.get(bin + 1).copied().unwrap_or(f64::INFINITY),
                q_hat,
                stderr,
                q_mass: qt / surv_t,
                p_mass: ph / n,
                survivors: qt,
            });
        }
        Ok((bins, p_t))
    };

    let (mut j, (mut bins, _)) = (0, build(0)?);
    let mut tv = None;
    while j + 1 < nt {
        let (next, _) = build(j + 1)?;
        let d = 0.5
            * bins
                .iter()
                .zip(&next)
                .map(|(a, b)| (a.q_mass - b.q_mass).abs())
                .sum::<f64>();
        tv = Some(d);
        j += 1;
        bins = next;
        if d < TV_TOLERANCE {
            break;
        }
    }
    let converged = qc.max_doublings == 0 || tv.is_some_and(|d| d < TV_TOLERANCE);
    let survivors = tot[nb * width + 1 + j];
    if survivors < qc.min_survivors {
        return Err(Error::Insufficient(format!(
            "{survivors:.1} paths survive to t = {} (< {})",
            times[j], qc.min_survivors
        )));
    }
    Ok(QMarginalEstimate {
        h,
        t_prelimit: times[j],
        n_paths: cfg.n_paths,
        survival_t: tot[nb * width + 1 + j] / n,
        bins,
        survival_h,
        tv_change: tv,
        converged,
    })
}
