//! Monte Carlo estimates of `φ(t) = P(O_t)` and `Φ(t) = ∫₀ᵗ φ` with
//! discretisation brackets and the one-large-jump decomposition.

use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryFunction;
use crate::ensemble::{record_kills, refine, simulate, ConstraintGrid, Ensemble, TimeSummary};
use crate::error::{Error, Result};
use crate::parallel::map_chunks;
use crate::rng::Seed;
use crate::stats::{binomial_se, Moments};

/// Smallest accepted path budget.
pub const MIN_PATHS: u64 = 1000;
/// Default number of geometric grid points.
pub const DEFAULT_GRID_POINTS: usize = 512;
/// Switch to the one-jump decomposition below this many expected survivors.
pub const RARE_EVENT_SURVIVORS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DirectBracket,
    OneJumpDecomposition,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::DirectBracket => "direct-bracket",
            Method::OneJumpDecomposition => "one-jump",
        }
    }
}

/// Summary of the grid an estimate was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub first: f64,
    pub horizon: f64,
}

impl GridSpec {
    pub fn of(grid: &ConstraintGrid) -> Self {
        Self {
            points: grid.len(),
            first: grid.points()[1],
            horizon: grid.horizon(),
        }
    }
}

/// Path budget and randomness for one estimator call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: u64,
    pub seed: Seed,
    pub workers: usize,
}

impl McConfig {
    pub fn new(n_paths: u64, seed: u64) -> Self {
        Self {
            n_paths,
            seed: Seed(seed),
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    fn check(&self) -> Result<()> {
        if self.n_paths < MIN_PATHS {
            return Err(Error::InvalidParameter(format!(
                "at least {MIN_PATHS} paths are required, got {}",
                self.n_paths
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub t: f64,
    pub lower: f64,
    pub upper: f64,
    pub point: f64,
    pub stderr: f64,
    pub n_paths: u64,
    pub grid: GridSpec,
    pub method: Method,
}

impl SurvivalEstimate {
    /// Direct bracket frequencies from an ensemble summary.
    pub fn direct(s: &TimeSummary, grid: GridSpec) -> Self {
        let lower = s.lower.alive.mean();
        let upper = s.upper.alive.mean();
        let point = 0.5 * (lower + upper);
        Self {
            t: s.t,
            lower,
            upper,
            point,
            stderr: binomial_se(point, s.n_paths() as usize),
            n_paths: s.n_paths(),
            grid,
            method: Method::DirectBracket,
        }
    }

    /// Rao–Blackwellised one-jump estimate from an ensemble summary; falls back
    /// to the direct frequencies where `g(t) <= 1`.
    pub fn one_jump(s: &TimeSummary, grid: GridSpec) -> Self {
        let lower = s.lower.one_jump.mean().clamp(0.0, 1.0);
        let upper = s.upper.one_jump.mean().clamp(lower, 1.0);
        Self {
            t: s.t,
            lower,
            upper,
            point: s.point.one_jump.mean().clamp(lower, upper),
            stderr: s.point.one_jump.se(),
            n_paths: s.n_paths(),
            grid,
            method: Method::OneJumpDecomposition,
        }
    }

    /// Relative standard error; infinite when nothing survived.
    pub fn relative_se(&self) -> f64 {
        if self.point > 0.0 {
            self.stderr / self.point
        } else {
            f64::INFINITY
        }
    }
}

fn ensure_on_grid(grid: &ConstraintGrid, t: f64) -> Result<()> {
    if grid.index_of(t).is_none() {
        return Err(Error::InvalidParameter(format!(
            "t = {t} is not a grid point"
        )));
    }
    Ok(())
}

fn summarize(
    f: &BoundaryFunction,
    t: f64,
    grid: &ConstraintGrid,
    cfg: &McConfig,
    jumps: bool,
) -> Result<TimeSummary> {
    cfg.check()?;
    ensure_on_grid(grid, t)?;
    let times = [t];
    let ens = Ensemble {
        f,
        grid,
        times: &times,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        workers: cfg.workers,
        jumps,
    };
    Ok(ens.run()?[0])
}

/// Geometric grid ending at `t` (or containing every value of `times`).
pub fn default_grid(f: &BoundaryFunction, times: &[f64], points: usize) -> Result<ConstraintGrid> {
    let horizon = times.iter().copied().fold(f64::NAN, f64::max);
    ConstraintGrid::geometric(f, horizon, points, times)
}

/// Direct bracket estimate: upper event `τ(s_i) > g(s_i)`, lower event `τ(s_i) > g(s_{i+1})`.
pub fn estimate_survival_bracket(
    f: &BoundaryFunction,
    t: f64,
    grid: &ConstraintGrid,
    cfg: &McConfig,
) -> Result<SurvivalEstimate> {
    let s = summarize(f, t, grid, cfg, false)?;
    Ok(SurvivalEstimate::direct(&s, GridSpec::of(grid)))
}

/// One-large-jump decomposition estimate (direct method where `g(t) <= 1`).
pub fn estimate_one_jump(
    f: &BoundaryFunction,
    t: f64,
    grid: &ConstraintGrid,
    cfg: &McConfig,
) -> Result<SurvivalEstimate> {
    let s = summarize(f, t, grid, cfg, true)?;
    Ok(if f.g(t) <= 1.0 {
        SurvivalEstimate::direct(&s, GridSpec::of(grid))
    } else {
        SurvivalEstimate::one_jump(&s, GridSpec::of(grid))
    })
}

/// `P̂(O_t ∩ {Δ₁^{g(t)∨1} <= t}) / P̂(O_t)` with a binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRatio {
    pub t: f64,
    pub ratio: f64,
    pub stderr: f64,
    pub survivors: f64,
}

impl JumpRatio {
    pub fn from_summary(s: &TimeSummary) -> Result<Self> {
        let (a, b) = (&s.point.alive_after_jump, &s.point.alive_capped);
        if b.sum <= 0.0 {
            return Err(Error::Insufficient(format!(
                "no surviving paths at t = {}",
                s.t
            )));
        }
        // delta method
        let r = a.sum / b.sum;
        let n = b.n as f64;
        let cov = (s.point.jump_cross.mean() - a.mean() * b.mean()) * n / (n - 1.0).max(1.0);
        let var = (a.variance() + r * r * b.variance() - 2.0 * r * cov).max(0.0);
        let stderr = (var / n).sqrt() / b.mean();
        Ok(Self {
            t: s.t,
            ratio: r.clamp(0.0, 1.0),
            stderr,
            survivors: b.sum,
        })
    }
}

pub fn estimate_big_jump_ratio(
    f: &BoundaryFunction,
    t: f64,
    grid: &ConstraintGrid,
    cfg: &McConfig,
) -> Result<JumpRatio> {
    JumpRatio::from_summary(&summarize(f, t, grid, cfg, true)?)
}

/// One horizon of a survival curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// The estimate chosen by the rare-event policy.
    pub estimate: SurvivalEstimate,
    pub direct: SurvivalEstimate,
    /// `Φ̂(t)`: mean occupation `min(κ, t)` averaged over the brackets.
    pub phi: f64,
    pub phi_se: f64,
    /// Half-width of the deterministic bracket band around `Φ̂`.
    pub phi_band: f64,
    /// `min(t, f(0))`, a lower bound for `Φ(t)`.
    pub phi_floor: f64,
    pub jump_ratio: Option<JumpRatio>,
}

impl CurvePoint {
    pub fn floor_ok(&self) -> bool {
        // the lower bracket meets the floor exactly
        self.phi - self.phi_band >= self.phi_floor * (1.0 - 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub points: Vec<CurvePoint>,
    pub summaries: Vec<TimeSummary>,
}

impl SurvivalCurve {
    pub fn from_summaries(
        f: &BoundaryFunction,
        grid: &ConstraintGrid,
        summaries: Vec<TimeSummary>,
    ) -> Self {
        let spec = GridSpec::of(grid);
        let points = summaries
            .iter()
            .map(|s| {
                let direct = SurvivalEstimate::direct(s, spec);
                let rare = direct.point * (s.n_paths() as f64) < RARE_EVENT_SURVIVORS;
                let estimate = if rare && f.g(s.t) > 1.0 {
                    SurvivalEstimate::one_jump(s, spec)
                } else {
                    direct
                };
                let (lo, up) = (s.lower.occupation.mean(), s.upper.occupation.mean());
                CurvePoint {
                    estimate,
                    direct,
                    phi: s.point.occupation.mean(),
                    phi_se: s.point.occupation.se(),
                    phi_band: 0.5 * (up - lo),
                    phi_floor: s.t.min(f.f0()),
                    jump_ratio: JumpRatio::from_summary(s).ok(),
                }
            })
            .collect();
        Self { points, summaries }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "t",
            "lower",
            "point",
            "upper",
            "stderr",
            "n",
            "Phi_hat",
            "Phi_band",
            "method",
            "big_jump_ratio",
            "floor_ok",
        ])?;
        for p in &self.points {
            let e = &p.estimate;
            out.write_record([
                fmt(e.t),
                fmt(e.lower),
                fmt(e.point),
                fmt(e.upper),
                fmt(e.stderr),
                e.n_paths.to_string(),
                fmt(p.phi),
                fmt(p.phi_band),
                e.method.as_str().to_string(),
                p.jump_ratio.map_or_else(String::new, |r| fmt(r.ratio)),
                p.floor_ok().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fixed-format float for byte-stable CSV output.
pub(crate) fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.10e}")
    } else {
        x.to_string()
    }
}

/// Runs one ensemble (with jump location) serving every `t` of `t_grid`.
pub fn build_survival_curve(
    f: &BoundaryFunction,
    t_grid: &[f64],
    grid_points: usize,
    cfg: &McConfig,
) -> Result<SurvivalCurve> {
    cfg.check()?;
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) || !(t_grid[0] > 0.0) {
        return Err(Error::InvalidParameter(
            "t grid must be positive and strictly increasing".into(),
        ));
    }
    let grid = default_grid(f, t_grid, grid_points)?;
    let ens = Ensemble {
        f,
        grid: &grid,
        times: t_grid,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        workers: cfg.workers,
        jumps: true,
    };
    Ok(SurvivalCurve::from_summaries(f, &grid, ens.run()?))
}

/// Brackets at `t` on a geometric grid and on its midpoint refinement, same paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub t: f64,
    pub base_points: usize,
    pub fine_points: usize,
    pub base_lower: f64,
    pub base_upper: f64,
    pub fine_lower: f64,
    pub fine_upper: f64,
    /// Paths whose fine brackets were not nested inside the base brackets.
    pub nesting_violations: u64,
}

impl RefinementRow {
    pub fn base_gap(&self) -> f64 {
        self.base_upper - self.base_lower
    }

    pub fn fine_gap(&self) -> f64 {
        self.fine_upper - self.fine_lower
    }

    pub fn gap_ratio(&self) -> f64 {
        self.fine_gap() / self.base_gap()
    }
}

pub fn refinement_study(
    f: &BoundaryFunction,
    t: f64,
    base_points: usize,
    cfg: &McConfig,
) -> Result<RefinementRow> {
    cfg.check()?;
    let base = ConstraintGrid::geometric(f, t, base_points, &[t])?;
    let fine = base.refined(f)?;
    let parts = map_chunks(cfg.n_paths, cfg.workers, |range| {
        let mut m = [Moments::default(); 4];
        let mut bad = 0u64;
        for idx in range {
            let rec = simulate(&base, cfg.seed, idx, f64::INFINITY, false, true);
            let fr = refine(&base, &fine, &rec, cfg.seed, idx);
            let kb = record_kills(&base, f, &rec);
            let kf = record_kills(&fine, f, &fr);
            let flags = [
                kb.alive_lower(t),
                kb.alive_upper(t),
                kf.alive_lower(t),
                kf.alive_upper(t),
            ];
            for (acc, alive) in m.iter_mut().zip(flags) {
                acc.push(if alive { 1.0 } else { 0.0 });
            }
            if (flags[0] && !flags[2]) || (flags[3] && !flags[1]) {
                bad += 1;
            }
        }
        (m, bad)
    })?;
    let mut m = [Moments::default(); 4];
    let mut bad = 0;
    for (pm, pb) in &parts {
        for (a, b) in m.iter_mut().zip(pm) {
            a.merge(b);
        }
        bad += pb;
    }
    Ok(RefinementRow {
        t,
        base_points: base.len(),
        fine_points: fine.len(),
        base_lower: m[0].mean(),
        base_upper: m[1].mean(),
        fine_lower: m[2].mean(),
        fine_upper: m[3].mean(),
        nesting_violations: bad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable::tau_survival;

    fn family() -> BoundaryFunction {
        BoundaryFunction::sqrt_log(1.5, 0.5).unwrap()
    }

    #[test]
    fn below_floor_is_sure() {
        let f = family();
        let t = 0.5 * (1.0 - 1e-6);
        let grid = ConstraintGrid::geometric(&f, t, 64, &[t]).unwrap();
        let e = estimate_survival_bracket(&f, t, &grid, &McConfig::new(1000, 1)).unwrap();
        assert_eq!((e.lower, e.upper, e.point), (1.0, 1.0, 1.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = family();
        let grid = default_grid(&f, &[5.0], 64).unwrap();
        assert!(estimate_survival_bracket(&f, 5.0, &grid, &McConfig::new(999, 1)).is_err());
        assert!(estimate_survival_bracket(&f, 4.0, &grid, &McConfig::new(1000, 1)).is_err());
        assert!(build_survival_curve(&f, &[2.0, 1.0], 64, &McConfig::new(1000, 1)).is_err());
    }

    #[test]
    fn single_constraint_upper_within_marginal() {
        let f = family();
        let s = 3.0;
        let grid = ConstraintGrid::new(&f, vec![0.0, 0.3, s]).unwrap();
        let e = estimate_survival_bracket(&f, s, &grid, &McConfig::new(200_000, 2)).unwrap();
        let p = tau_survival(s, f.g(s));
        assert!(
            (e.upper - p).abs() < 3.0 * binomial_se(p, 200_000),
            "{} vs {p}",
            e.upper
        );
    }

    #[test]
    fn one_jump_agrees_with_direct() {
        let f = family();
        let t = 5.0;
        let grid = default_grid(&f, &[t], 256).unwrap();
        let cfg = McConfig::new(100_000, 3);
        let d = estimate_survival_bracket(&f, t, &grid, &cfg).unwrap();
        let j = estimate_one_jump(&f, t, &grid, &cfg).unwrap();
        assert_eq!(j.method, Method::OneJumpDecomposition);
        let pooled = (d.stderr.powi(2) + j.stderr.powi(2)).sqrt();
        assert!((d.point - j.point).abs() < 3.0 * pooled, "{d:?} {j:?}");
        assert!(j.lower <= j.point && j.point <= j.upper);
    }

    #[test]
    fn one_jump_reduces_variance_for_rare_events() {
        let f = family();
        let t = 40.0;
        let grid = default_grid(&f, &[t], 256).unwrap();
        let cfg = McConfig::new(20_000, 4);
        let d = estimate_survival_bracket(&f, t, &grid, &cfg).unwrap();
        let j = estimate_one_jump(&f, t, &grid, &cfg).unwrap();
        assert!(d.point < 1e-2);
        assert!(
            j.relative_se() < d.relative_se(),
            "{} vs {}",
            j.relative_se(),
            d.relative_se()
        );
    }

    #[test]
    fn small_g_falls_back_to_direct() {
        let f = family();
        let t = 0.9;
        assert!(f.g(t) <= 1.0);
        let grid = default_grid(&f, &[t], 64).unwrap();
        let e = estimate_one_jump(&f, t, &grid, &McConfig::new(1000, 5)).unwrap();
        assert_eq!(e.method, Method::DirectBracket);
    }

    #[test]
    fn sure_event_ratio_is_jump_probability() {
        let f = family();
        let t = 0.4;
        let grid = default_grid(&f, &[t], 64).unwrap();
        let n = 100_000;
        let r = estimate_big_jump_ratio(&f, t, &grid, &McConfig::new(n, 6)).unwrap();
        let p = -(-crate::stable::levy_tail(1.0) * t).exp_m1();
        assert!(
            (r.ratio - p).abs() < 4.0 * binomial_se(p, n as usize),
            "{} vs {p}",
            r.ratio
        );
    }

    #[test]
    fn curve_is_monotone_and_above_floor() {
        let f = family();
        let ts = [0.25, 0.5, 1.0, 2.0, 5.0, 10.0];
        let curve = build_survival_curve(&f, &ts, 256, &McConfig::new(20_000, 7)).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].phi >= w[0].phi);
        }
        for p in &curve.points {
            assert!(p.floor_ok(), "{p:?}");
            assert!(p.estimate.lower <= p.estimate.point && p.estimate.point <= p.estimate.upper);
        }
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().count(),
            ts.len() + 1
        );
    }

    #[test]
    fn refinement_halves_gap() {
        let f = family();
        let row = refinement_study(&f, 5.0, 256, &McConfig::new(20_000, 8)).unwrap();
        assert_eq!(row.nesting_violations, 0);
        assert!(row.fine_lower >= row.base_lower && row.fine_upper <= row.base_upper);
        assert!(row.gap_ratio() <= 0.6, "{row:?}");
    }
}
