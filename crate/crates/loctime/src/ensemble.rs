//! Path engine shared by the estimators: exact τ paths on a local-time grid,
//! bracket kill times, big-jump bookkeeping and per-horizon sufficient statistics.

use crate::boundary::BoundaryFunction;
use crate::bridge::{locate_jumps, split_increment, LocatedJump};
use crate::error::{Error, Result};
use crate::parallel::map_chunks;
use crate::rng::{Lane, Seed};
use crate::stable::{levy_tail, sample_tau_increment};
use crate::stats::Moments;
use rand_chacha::ChaCha8Rng;

/// Local-time grid `0 = s₀ < s₁ < …` with the boundary inverse tabulated on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGrid {
    s: Vec<f64>,
    g: Vec<f64>,
    start: usize,
}

impl ConstraintGrid {
    pub fn new(f: &BoundaryFunction, s: Vec<f64>) -> Result<Self> {
        if s.len() < 2 || s[0] != 0.0 || s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "grid must start at 0 and increase strictly".into(),
            ));
        }
        if !(s[1] < f.f0()) {
            return Err(Error::InvalidParameter(format!(
                "first grid point {} must lie below f(0) = {}",
                s[1],
                f.f0()
            )));
        }
        let g: Vec<f64> = s.iter().map(|&x| f.g(x)).collect();
        let start = s.partition_point(|&x| x < f.f0()) - 1;
        Ok(Self { s, g, start })
    }

    /// Geometric grid from `f(0)/8` to `horizon` with `points` nodes, plus the origin
    /// and every value of `include` (inserted exactly).
    pub fn geometric(
        f: &BoundaryFunction,
        horizon: f64,
        points: usize,
        include: &[f64],
    ) -> Result<Self> {
        if !(horizon > 0.0) || points < 2 {
            return Err(Error::InvalidParameter(
                "grid needs a positive horizon and at least two points".into(),
            ));
        }
        let first = f.f0() / 8.0;
        let mut s = vec![0.0];
        if horizon <= first {
            s.push(horizon);
        } else {
            let ratio = (horizon / first).ln() / (points - 1) as f64;
            s.extend((0..points).map(|k| first * (ratio * k as f64).exp()));
            *s.last_mut().expect("nonempty") = horizon;
        }
        for &t in include {
            if t > 0.0 && t <= horizon {
                s.push(t);
            }
        }
        s.sort_by(f64::total_cmp);
        // merge near-duplicates, keeping requested values exact
        let mut merged: Vec<f64> = Vec::with_capacity(s.len());
        for x in s {
            match merged.last_mut() {
                Some(last) if (x - *last).abs() <= 1e-12 * x.abs().max(1e-300) => {
                    if include.contains(&x) {
                        *last = x;
                    }
                }
                _ => merged.push(x),
            }
        }
        Self::new(f, merged)
    }

    /// The grid with one midpoint inserted per cell (geometric, arithmetic in the first cell).
    pub fn refined(&self, f: &BoundaryFunction) -> Result<Self> {
        let mut s = Vec::with_capacity(2 * self.s.len() - 1);
        for w in self.s.windows(2) {
            s.push(w[0]);
            s.push(if w[0] > 0.0 {
                (w[0] * w[1]).sqrt()
            } else {
                0.5 * w[1]
            });
        }
        s.push(*self.s.last().expect("nonempty"));
        Self::new(f, s)
    }

    pub fn points(&self) -> &[f64] {
        &self.s
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.s[self.s.len() - 1]
    }

    /// Last grid index strictly below `f(0)`; earlier values never matter.
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn g_at(&self, i: usize) -> f64 {
        self.g[i]
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.s.partition_point(|&x| x < t);
        (i < self.s.len() && self.s[i] == t).then_some(i)
    }
}

/// τ sampled at grid points `start..start+values.len()` (stopped at the upper kill).
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub start: usize,
    pub values: Vec<f64>,
    pub jumps: Vec<LocatedJump>,
}

impl PathRecord {
    pub fn value(&self, i: usize) -> f64 {
        self.values[i - self.start]
    }

    /// One past the last stored grid index.
    pub fn end(&self) -> usize {
        self.start + self.values.len()
    }
}

/// The two random streams a path draws from.
#[derive(Debug, Clone)]
pub struct PathStreams {
    base: ChaCha8Rng,
    jumps: ChaCha8Rng,
}

impl PathStreams {
    pub fn new(seed: Seed, index: u64) -> Self {
        Self {
            base: seed.stream(index, Lane::Base),
            jumps: seed.stream(index, Lane::Jumps),
        }
    }
}

/// Draws the first stored value of a path (at the origin or at `grid.start()`).
pub fn start_path(
    grid: &ConstraintGrid,
    streams: &mut PathStreams,
    jump_threshold: f64,
    from_origin: bool,
) -> PathRecord {
    let start = if from_origin { 0 } else { grid.start };
    let mut jumps = Vec::new();
    let level = sample_tau_increment(grid.s[start], &mut streams.base);
    if start > 0 {
        locate_jumps(
            0.0,
            grid.s[start],
            0.0,
            level,
            jump_threshold,
            &mut streams.jumps,
            &mut jumps,
        );
    }
    let mut values = Vec::with_capacity(64);
    values.push(level);
    PathRecord {
        start,
        values,
        jumps,
    }
}

/// Extends `rec` up to grid index `until`. Returns `false` if the path hit a
/// grid violation (and `stop_at_kill` ended it there).
pub fn advance(
    grid: &ConstraintGrid,
    rec: &mut PathRecord,
    until: usize,
    streams: &mut PathStreams,
    jump_threshold: f64,
    stop_at_kill: bool,
) -> bool {
    let s = &grid.s;
    let mut level = *rec.values.last().expect("started path");
    for i in rec.end()..=until.min(s.len() - 1) {
        let inc = sample_tau_increment(s[i] - s[i - 1], &mut streams.base);
        locate_jumps(
            s[i - 1],
            s[i],
            level,
            inc,
            jump_threshold,
            &mut streams.jumps,
            &mut rec.jumps,
        );
        level += inc;
        rec.values.push(level);
        if stop_at_kill && level <= grid.g[i] {
            return false;
        }
    }
    true
}

/// Draws τ on `grid`. With `from_origin` every grid value is produced, otherwise
/// the first stored value is at `grid.start()`. Stops after the first grid
/// violation when `stop_at_kill`. Jumps above `jump_threshold` are located using
/// an independent stream, so the grid values do not depend on the threshold.
pub fn simulate(
    grid: &ConstraintGrid,
    seed: Seed,
    index: u64,
    jump_threshold: f64,
    from_origin: bool,
    stop_at_kill: bool,
) -> PathRecord {
    let mut streams = PathStreams::new(seed, index);
    let mut rec = start_path(grid, &mut streams, jump_threshold, from_origin);
    advance(
        grid,
        &mut rec,
        grid.len() - 1,
        &mut streams,
        jump_threshold,
        stop_at_kill,
    );
    rec
}

/// Refines a record drawn on `base` onto `fine = base.refined()` with common random numbers.
pub fn refine(
    base: &ConstraintGrid,
    fine: &ConstraintGrid,
    rec: &PathRecord,
    seed: Seed,
    index: u64,
) -> PathRecord {
    debug_assert_eq!(fine.len(), 2 * base.len() - 1);
    let mut rng = seed.stream(index, Lane::Refine);
    let mut values = Vec::with_capacity(2 * rec.values.len());
    for i in rec.start..rec.end() {
        let v = rec.value(i);
        values.push(v);
        if i + 1 < rec.end() {
            let (a, m, b) = (base.s[i], fine.s[2 * i + 1], base.s[i + 1]);
            let inc = rec.value(i + 1) - v;
            values.push(v + split_increment(m - a, b - m, inc, &mut rng));
        }
    }
    PathRecord {
        start: 2 * rec.start,
        values,
        jumps: Vec::new(),
    }
}

/// Kill local times of the two brackets: a bracket is alive at `t` iff `t`
/// does not exceed its kill time. Both are `∞` for paths alive through the
/// stored range, and `lower <= upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kills {
    pub lower: f64,
    pub upper: f64,
}

impl Kills {
    pub fn alive_lower(&self, t: f64) -> bool {
        t <= self.lower
    }

    pub fn alive_upper(&self, t: f64) -> bool {
        t <= self.upper
    }
}

/// Scans values `v(i)`, `i ∈ start..end`, for bracket violations.
///
/// Lower: first cell with `τ(s_i) <= g(s_{i+1})`; the path is certainly alive
/// while `g(t) < τ(s_i)`, so the kill time is `f(τ(s_i))` clamped to the cell.
/// Upper: first point with `τ(s_j) <= g(s_j)`; the true path is dead once
/// `g(t) >= τ(s_j)`, so the kill time is `f(τ(s_j))` clamped to `[s_{j-1}, s_j]`.
pub fn kills<V: Fn(usize) -> f64>(
    grid: &ConstraintGrid,
    f: &BoundaryFunction,
    start: usize,
    end: usize,
    v: V,
) -> Kills {
    let (s, g) = (&grid.s, &grid.g);
    let mut lower = f64::INFINITY;
    let mut upper = f64::INFINITY;
    for i in start..end {
        let x = v(i);
        if lower.is_infinite() && i + 1 < s.len() && x <= g[i + 1] {
            lower = f.f(x).clamp(s[i], s[i + 1]);
        }
        if x <= g[i] {
            upper = f.f(x).clamp(s[i - 1], s[i]);
            break;
        }
    }
    Kills { lower, upper }
}

pub fn record_kills(grid: &ConstraintGrid, f: &BoundaryFunction, rec: &PathRecord) -> Kills {
    kills(grid, f, rec.start.max(grid.start), rec.end(), |i| {
        rec.value(i)
    })
}

/// Kill times of the path with every jump larger than `cap` removed, and the
/// local time of the first such jump (`∞` if none was located).
pub fn truncated_kills(
    grid: &ConstraintGrid,
    f: &BoundaryFunction,
    rec: &PathRecord,
    cap: f64,
    full: Kills,
    buf: &mut Vec<f64>,
) -> (Kills, f64) {
    let first = rec
        .jumps
        .iter()
        .find(|j| j.size > cap)
        .map_or(f64::INFINITY, |j| j.local_time);
    if first.is_infinite() {
        return (full, first);
    }
    buf.clear();
    let mut removed = 0.0;
    let mut k = 0;
    for i in rec.start..rec.end() {
        let si = grid.s[i];
        while k < rec.jumps.len() && rec.jumps[k].local_time < si {
            if rec.jumps[k].size > cap {
                removed += rec.jumps[k].size;
            }
            k += 1;
        }
        buf.push(rec.value(i) - removed);
    }
    let start = rec.start;
    let tk = kills(grid, f, start.max(grid.start), rec.end(), |i| {
        buf[i - start]
    });
    (tk, first)
}

macro_rules! bracket_stats {
    ($($(#[$doc:meta])* $name:ident),* $(,)?) => {
        /// Per-path statistics accumulated for one bracket at one horizon.
        #[derive(Debug, Clone, Copy, Default, PartialEq)]
        pub struct BracketMoments {
            $($(#[$doc])* pub $name: Moments,)*
        }

        impl BracketMoments {
            fn merge(&mut self, o: &BracketMoments) {
                $(self.$name.merge(&o.$name);)*
            }
        }

        #[derive(Debug, Clone, Copy, Default)]
        struct PathStats {
            $($name: f64,)*
        }

        impl PathStats {
            fn push_into(&self, m: &mut BracketMoments) {
                $(m.$name.push(self.$name);)*
            }

            fn average(a: &PathStats, b: &PathStats) -> PathStats {
                PathStats { $($name: 0.5 * (a.$name + b.$name),)* }
            }

        }
    };
}

// Grid brackets (`alive`, `occupation`) follow the plain grid events. The
// remaining statistics use jump-aware brackets: the path is declared rescued
// by the first jump above the cap `a` unless its truncated version was killed
// before it. These are still rigorous brackets, and they make the renewal
// identity hold exactly in expectation for each bracket separately.
bracket_stats! {
    /// `1{alive at t}` on grid events.
    alive,
    /// `min(κ, t)` on grid events; its mean is `Φ̂(t)`.
    occupation,
    /// `1{alive at t}`, jump-aware.
    alive_capped,
    /// `min(κ, t)`, jump-aware.
    occupation_capped,
    /// `1{alive at t, first jump above the cap before t}`.
    alive_after_jump,
    /// `1{alive, no big jump by t} - λ²(t m - m²/2)`, `m = min(κ, Δ, t)`; mean `Ĥ(t)`.
    residual,
    /// `1{alive} - λ min(κ, t) - residual`; exact mean zero.
    identity,
    /// Conditional survival given the truncated path; mean is the one-jump estimate.
    one_jump,
    /// `1{truncated path alive at t}`.
    truncated_alive,
    /// Product of `alive_after_jump` and `alive_capped`, for ratio errors.
    jump_cross,
}

/// Sufficient statistics at one horizon `t`, for the lower bracket, the upper
/// bracket and their per-path average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSummary {
    pub t: f64,
    /// Jump cap `g(t) ∨ 1`.
    pub cap: f64,
    /// `λ = 2K/√cap`, the rate of jumps above the cap.
    pub rate: f64,
    pub lower: BracketMoments,
    pub upper: BracketMoments,
    pub point: BracketMoments,
}

impl TimeSummary {
    fn new(f: &BoundaryFunction, t: f64) -> Self {
        let cap = f.cap(t);
        Self {
            t,
            cap,
            rate: levy_tail(cap),
            lower: BracketMoments::default(),
            upper: BracketMoments::default(),
            point: BracketMoments::default(),
        }
    }

    fn merge(&mut self, o: &TimeSummary) {
        self.lower.merge(&o.lower);
        self.upper.merge(&o.upper);
        self.point.merge(&o.point);
    }

    pub fn n_paths(&self) -> u64 {
        self.point.alive.n
    }
}

/// An ensemble run: `n_paths` exact paths on `grid`, summarised at each of `times`.
#[derive(Debug, Clone)]
pub struct Ensemble<'a> {
    pub f: &'a BoundaryFunction,
    pub grid: &'a ConstraintGrid,
    pub times: &'a [f64],
    pub n_paths: u64,
    pub seed: Seed,
    pub workers: usize,
    /// Locate big jumps; needed for everything except the plain brackets.
    pub jumps: bool,
}

fn path_stats(t: f64, rate: f64, k: Kills, tk: Kills, first_jump: f64) -> (PathStats, PathStats) {
    let one = |b: bool| if b { 1.0 } else { 0.0 };
    let make = |grid_kill: f64, trunc_kill: f64| {
        let kappa = if trunc_kill < first_jump {
            trunc_kill
        } else {
            f64::INFINITY
        };
        let alive = t <= kappa;
        let occ = kappa.min(t);
        let m = occ.min(first_jump);
        let residual = one(alive && first_jump > t) - rate * rate * (t * m - 0.5 * m * m);
        PathStats {
            alive: one(t <= grid_kill),
            occupation: grid_kill.min(t),
            alive_capped: one(alive),
            occupation_capped: occ,
            alive_after_jump: one(alive && first_jump <= t),
            residual,
            identity: one(alive) - rate * occ - residual,
            one_jump: -(-rate * trunc_kill.min(t)).exp_m1()
                + (-rate * t).exp() * one(t <= trunc_kill),
            truncated_alive: one(t <= trunc_kill),
            jump_cross: 0.0,
        }
    };
    (make(k.lower, tk.lower), make(k.upper, tk.upper))
}

impl Ensemble<'_> {
    pub fn run(&self) -> Result<Vec<TimeSummary>> {
        if self.times.iter().any(|&t| self.grid.index_of(t).is_none()) {
            return Err(Error::InvalidParameter(
                "every summary time must be a grid point".into(),
            ));
        }
        let threshold = if self.jumps {
            self.times
                .iter()
                .map(|&t| self.f.cap(t))
                .fold(f64::INFINITY, f64::min)
        } else {
            f64::INFINITY
        };
        let blank: Vec<TimeSummary> = self
            .times
            .iter()
            .map(|&t| TimeSummary::new(self.f, t))
            .collect();
        let parts = map_chunks(self.n_paths, self.workers, |range| {
            let mut acc = blank.clone();
            let mut buf = Vec::new();
            for idx in range {
                let rec = simulate(self.grid, self.seed, idx, threshold, false, true);
                let k = record_kills(self.grid, self.f, &rec);
                for ts in acc.iter_mut() {
                    let (tk, first) = if self.jumps {
                        truncated_kills(self.grid, self.f, &rec, ts.cap, k, &mut buf)
                    } else {
                        (k, f64::INFINITY)
                    };
                    let (lo, up) = path_stats(ts.t, ts.rate, k, tk, first);
                    let mid = PathStats::average(&lo, &up);
                    for (st, m) in [
                        (lo, &mut ts.lower),
                        (up, &mut ts.upper),
                        (mid, &mut ts.point),
                    ] {
                        let mut st = st;
                        st.jump_cross = st.alive_after_jump * st.alive_capped;
                        st.push_into(m);
                    }
                }
            }
            acc
        })?;
        let mut total = blank;
        for part in &parts {
            for (a, b) in total.iter_mut().zip(part) {
                a.merge(b);
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable::tau_survival;

    fn family() -> BoundaryFunction {
        BoundaryFunction::sqrt_log(1.5, 0.5).unwrap()
    }

    #[test]
    fn grid_construction() {
        let f = family();
        let g = ConstraintGrid::geometric(&f, 10.0, 64, &[2.0, 5.0, 10.0]).unwrap();
        assert_eq!(g.points()[0], 0.0);
        assert_eq!(g.points()[1], 0.0625);
        for t in [2.0, 5.0, 10.0] {
            assert!(g.index_of(t).is_some());
        }
        assert!(g.points()[g.start()] < 0.5 && g.points()[g.start() + 1] >= 0.5);
        let r = g.refined(&f).unwrap();
        assert_eq!(r.len(), 2 * g.len() - 1);
        assert!(r.index_of(5.0).is_some());
        assert!(ConstraintGrid::new(&f, vec![0.0, 0.6, 1.0]).is_err());
    }

    #[test]
    fn brackets_ordered_and_floor_respected() {
        let f = family();
        let grid = ConstraintGrid::geometric(&f, 20.0, 256, &[0.5]).unwrap();
        for idx in 0..2000 {
            let rec = simulate(&grid, Seed(3), idx, f64::INFINITY, false, true);
            let k = record_kills(&grid, &f, &rec);
            assert!(k.lower <= k.upper);
            assert!(k.lower >= f.f0());
            for &t in grid.points() {
                assert!(!k.alive_lower(t) || k.alive_upper(t), "t = {t}, {k:?}");
            }
        }
    }

    #[test]
    fn values_identical_with_and_without_jump_location() {
        let f = family();
        let grid = ConstraintGrid::geometric(&f, 20.0, 128, &[]).unwrap();
        for idx in 0..200 {
            let a = simulate(&grid, Seed(4), idx, f64::INFINITY, false, true);
            let b = simulate(&grid, Seed(4), idx, 1.0, false, true);
            assert_eq!(a.values, b.values);
            for j in &b.jumps {
                assert!(j.size > 1.0);
            }
        }
    }

    #[test]
    fn refinement_preserves_base_values_and_tightens() {
        let f = family();
        let base = ConstraintGrid::geometric(&f, 10.0, 64, &[]).unwrap();
        let fine = base.refined(&f).unwrap();
        for idx in 0..2000 {
            let rec = simulate(&base, Seed(8), idx, f64::INFINITY, false, true);
            let fr = refine(&base, &fine, &rec, Seed(8), idx);
            for i in rec.start..rec.end() {
                assert_eq!(fr.value(2 * i), rec.value(i));
            }
            assert!(fr.values.windows(2).all(|w| w[1] >= w[0]));
            let kb = record_kills(&base, &f, &rec);
            let kf = record_kills(&fine, &f, &fr);
            assert!(
                kf.lower >= kb.lower && kf.upper <= kb.upper,
                "{kb:?} {kf:?}"
            );
        }
    }

    #[test]
    fn single_constraint_matches_marginal() {
        // grid {0, s₁, s, s+} with one binding point s: upper survival is P(τ_s > g(s))
        let f = family();
        let s = 2.0;
        let grid = ConstraintGrid::new(&f, vec![0.0, 0.25, s]).unwrap();
        let times = [s];
        let ens = Ensemble {
            f: &f,
            grid: &grid,
            times: &times,
            n_paths: 100_000,
            seed: Seed(1),
            workers: 1,
            jumps: false,
        };
        let sum = &ens.run().unwrap()[0];
        let p = sum.upper.alive.mean();
        let target = tau_survival(s, f.g(s));
        assert!(
            (p - target).abs() < 3.0 * sum.upper.alive.se(),
            "{p} vs {target}"
        );
    }

    #[test]
    fn identity_statistic_has_mean_zero() {
        let f = family();
        let times = [2.0, 5.0];
        let grid = ConstraintGrid::geometric(&f, 5.0, 256, &times).unwrap();
        let ens = Ensemble {
            f: &f,
            grid: &grid,
            times: &times,
            n_paths: 50_000,
            seed: Seed(2),
            workers: 1,
            jumps: true,
        };
        for s in ens.run().unwrap() {
            for b in [&s.lower, &s.upper, &s.point] {
                assert!(
                    b.identity.mean().abs() < 4.0 * b.identity.se() + 1e-15,
                    "{:?}",
                    b.identity
                );
                assert!(b.one_jump.mean() >= 0.0);
            }
            assert!(s.lower.alive.mean() <= s.upper.alive.mean());
        }
    }
}
