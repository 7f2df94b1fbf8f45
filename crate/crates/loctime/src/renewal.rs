//! The renewal identity `φ(t) − λ(t)Φ(t) = H(t)`, `λ(t) = 2K/√(g(t)∨1)`, its
//! solution `Φ(t) = Φ(t₀)·exp(∫ λ + ∫ ρ)`, residual diagnostics and the
//! one-jump asymptotic predictions built on it.

use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryFunction, Classification};
use crate::ensemble::TimeSummary;
use crate::error::{Error, Result};
use crate::stable::K;
use crate::survival::{build_survival_curve, fmt, McConfig, SurvivalCurve, SurvivalEstimate};

/// Piecewise-linear `ρ(t)` on increasing knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoTable {
    t: Vec<f64>,
    rho: Vec<f64>,
}

impl RhoTable {
    pub fn new(t: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if t.len() < 2 || t.len() != rho.len() || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "rho table needs at least two strictly increasing knots".into(),
            ));
        }
        if rho.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter(
                "rho table values must be finite".into(),
            ));
        }
        Ok(Self { t, rho })
    }

    pub fn from_diagnostics(rows: &[ResidualDiagnostic]) -> Result<Self> {
        Self::new(
            rows.iter().map(|r| r.t).collect(),
            rows.iter().map(|r| r.rho_hat).collect(),
        )
    }

    pub fn range(&self) -> (f64, f64) {
        (self.t[0], self.t[self.t.len() - 1])
    }

    fn value(&self, x: f64) -> f64 {
        let i = self
            .t
            .partition_point(|&k| k <= x)
            .clamp(1, self.t.len() - 1);
        let (t0, t1) = (self.t[i - 1], self.t[i]);
        let w = (x - t0) / (t1 - t0);
        self.rho[i - 1] + w * (self.rho[i] - self.rho[i - 1])
    }

    /// Exact integral of the interpolant over `[a, b]` inside the knot range.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if a < lo || b > hi {
            return Err(Error::OutOfRange(format!(
                "[{a}, {b}] is not inside the rho table range [{lo}, {hi}]"
            )));
        }
        let mut nodes = vec![a];
        nodes.extend(self.t.iter().copied().filter(|&k| k > a && k < b));
        nodes.push(b);
        Ok(nodes
            .windows(2)
            .map(|w| 0.5 * (w[1] - w[0]) * (self.value(w[0]) + self.value(w[1])))
            .sum())
    }
}

/// `Φ(t) = Φ₀·exp(∫_{t₀}^t 2K/√g + ∫_{t₀}^t ρ)` on a grid of `t ≥ t₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalSolution {
    pub t_grid: Vec<f64>,
    pub phi_solution: Vec<f64>,
    /// `∫_{t₀}^t 2K/√g(s) ds`.
    pub exponent_integral: Vec<f64>,
    /// `∫_{t₀}^t ρ(s) ds`, zero when the residual is neglected.
    pub rho_integral: Vec<f64>,
    pub t0: f64,
    pub phi0: f64,
    /// `∫_{t₀}^∞ 2K/√g`; infinite for recurrent boundaries.
    pub exponent_limit: f64,
}

impl RenewalSolution {
    fn index(&self, t: f64) -> Result<usize> {
        self.t_grid
            .iter()
            .position(|&x| x == t)
            .ok_or_else(|| Error::OutOfRange(format!("t = {t} is not on the solution grid")))
    }

    /// `Φ` at `t` interpolated log-linearly between grid points.
    pub fn phi_at(&self, t: f64) -> Result<f64> {
        let n = self.t_grid.len();
        let (lo, hi) = (self.t_grid[0].min(self.t0), self.t_grid[n - 1]);
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfRange(format!(
                "t = {t} outside the solution range [{lo}, {hi}]"
            )));
        }
        if let Ok(i) = self.index(t) {
            return Ok(self.phi_solution[i]);
        }
        let mut xs = vec![self.t0];
        let mut ys = vec![self.phi0.ln()];
        xs.extend(&self.t_grid);
        ys.extend(self.phi_solution.iter().map(|p| p.ln()));
        let i = xs.partition_point(|&x| x <= t).clamp(1, xs.len() - 1);
        let w = (t - xs[i - 1]) / (xs[i] - xs[i - 1]);
        Ok((ys[i - 1] + w * (ys[i] - ys[i - 1])).exp())
    }

    /// `Φ(∞)` with the residual neglected beyond the last grid point.
    pub fn plateau(&self) -> f64 {
        let rho = self.rho_integral.last().copied().unwrap_or(0.0);
        self.phi0 * (self.exponent_limit + rho).exp()
    }

    pub fn write_csv<W: std::io::Write>(
        &self,
        w: W,
        residuals: &[ResidualDiagnostic],
    ) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "t",
            "Phi_solution",
            "exponent_integral",
            "H_hat",
            "rho_hat",
            "rho_hat_sqrt_g",
        ])?;
        for (i, &t) in self.t_grid.iter().enumerate() {
            let r = residuals.iter().find(|r| r.t == t);
            let opt = |v: Option<f64>| v.map_or_else(String::new, fmt);
            out.write_record([
                fmt(t),
                fmt(self.phi_solution[i]),
                fmt(self.exponent_integral[i]),
                opt(r.map(|r| r.h_hat)),
                opt(r.map(|r| r.rho_hat)),
                opt(r.map(|r| r.smallness)),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn solve_with<E>(
    t0: f64,
    phi0: f64,
    t_grid: &[f64],
    rho: Option<&RhoTable>,
    exponent: E,
) -> Result<RenewalSolution>
where
    E: Fn(f64, f64) -> Result<f64>,
{
    if !(t0 >= 1.0) || !(phi0 > 0.0) || !phi0.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need t0 >= 1 and Phi0 > 0, got t0 = {t0}, Phi0 = {phi0}"
        )));
    }
    if t_grid.iter().any(|&t| !(t >= t0)) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(
            "solution grid must increase strictly from t0".into(),
        ));
    }
    let mut exponent_integral = Vec::with_capacity(t_grid.len());
    let mut rho_integral = Vec::with_capacity(t_grid.len());
    let (mut prev, mut acc) = (t0, 0.0);
    for &t in t_grid {
        acc += exponent(prev, t)?;
        prev = t;
        exponent_integral.push(acc);
        rho_integral.push(match rho {
            Some(table) => table.integral(t0, t)?,
            None => 0.0,
        });
    }
    let phi_solution = exponent_integral
        .iter()
        .zip(&rho_integral)
        .map(|(e, r)| phi0 * (e + r).exp())
        .collect();
    Ok(RenewalSolution {
        t_grid: t_grid.to_vec(),
        phi_solution,
        exponent_integral,
        rho_integral,
        t0,
        phi0,
        exponent_limit: f64::INFINITY,
    })
}

/// Solves the renewal ODE from the base point `(t0, Φ0)`; `ρ` defaults to zero.
pub fn solve_renewal(
    f: &BoundaryFunction,
    t0: f64,
    phi0: f64,
    t_grid: &[f64],
    rho: Option<&RhoTable>,
) -> Result<RenewalSolution> {
    if !(t0 > f.f0()) {
        return Err(Error::InvalidParameter(format!(
            "t0 = {t0} must exceed f(0) = {} so that g > 0",
            f.f0()
        )));
    }
    let mut sol = solve_with(t0, phi0, t_grid, rho, |a, b| {
        Ok(2.0 * K * f.inverse_root_integral(a, b)?)
    })?;
    sol.exponent_limit = 2.0 * K * f.inverse_root_tail(t0)?;
    Ok(sol)
}

/// One-jump prediction of `φ(t)` from the renewal solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiPrediction {
    pub t: f64,
    /// `2KΦ_solution(t)/√g(t)`.
    pub from_solution: f64,
    /// `2KΦ(∞)/√g(t)`, transient boundaries only.
    pub plateau: Option<f64>,
}

pub fn predict_phi(
    f: &BoundaryFunction,
    solution: &RenewalSolution,
    t: f64,
) -> Result<PhiPrediction> {
    let phi = solution.phi_at(t)?;
    let rate = 2.0 * K / f.cap(t).sqrt();
    let plateau = (f.classify() == Classification::Transient).then(|| rate * solution.plateau());
    Ok(PhiPrediction {
        t,
        from_solution: rate * phi,
        plateau,
    })
}

/// Residual `H(t)` of the renewal identity and its size relative to `Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiagnostic {
    pub t: f64,
    /// `P(O_t; no jump above the cap by t)`.
    pub survival_without_jump: f64,
    /// `λ² ∫₀ᵗ ∫₀^s P(O_v; no jump by v) dv ds`, computed path by path in closed form.
    pub clock_term: f64,
    pub h_hat: f64,
    pub h_se: f64,
    pub phi_hat: f64,
    pub big_phi_hat: f64,
    pub rho_hat: f64,
    /// `ρ̂·√g(t)`; `o(1)` by the finiteness lemma when `Φ(∞) < ∞`.
    pub smallness: f64,
    /// `φ̂ − λΦ̂ − Ĥ` on jump-aware brackets.
    pub identity_gap: f64,
    /// `√(se_φ² + λ² se_Φ² + se_H²)`.
    pub pooled_se: f64,
    /// Standard error of the per-path identity statistic.
    pub paired_se: f64,
}

impl ResidualDiagnostic {
    pub fn from_summary(f: &BoundaryFunction, s: &TimeSummary) -> Result<Self> {
        let p = &s.point;
        if p.alive_capped.sum <= 0.0 {
            return Err(Error::Insufficient(format!(
                "no surviving paths at t = {}",
                s.t
            )));
        }
        let lambda = s.rate;
        let survival_without_jump = p.alive_capped.mean() - p.alive_after_jump.mean();
        let h_hat = p.residual.mean();
        let big_phi_hat = p.occupation_capped.mean();
        let rho_hat = h_hat / big_phi_hat;
        Ok(Self {
            t: s.t,
            survival_without_jump,
            clock_term: survival_without_jump - h_hat,
            h_hat,
            h_se: p.residual.se(),
            phi_hat: p.alive_capped.mean(),
            big_phi_hat,
            rho_hat,
            smallness: rho_hat * f.g(s.t).max(1.0).sqrt(),
            identity_gap: p.alive_capped.mean() - lambda * big_phi_hat - h_hat,
            pooled_se: (p.alive_capped.se().powi(2)
                + (lambda * p.occupation_capped.se()).powi(2)
                + p.residual.se().powi(2))
            .sqrt(),
            paired_se: p.identity.se(),
        })
    }

    /// Identity gap within `k` pooled standard errors.
    pub fn identity_holds(&self, k: f64) -> bool {
        self.identity_gap.abs() <= k * self.pooled_se
    }
}

pub fn estimate_residual(
    f: &BoundaryFunction,
    t: f64,
    grid_points: usize,
    cfg: &McConfig,
) -> Result<ResidualDiagnostic> {
    if !(t >= f.f0()) {
        return Err(Error::InvalidParameter(format!(
            "residual needs t >= f(0) = {}",
            f.f0()
        )));
    }
    let curve = build_survival_curve(f, &[t], grid_points, cfg)?;
    ResidualDiagnostic::from_summary(f, &curve.summaries[0])
}

/// Monte Carlo against the one-jump asymptotics at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRow {
    pub t: f64,
    pub direct: SurvivalEstimate,
    /// Rao–Blackwellised one-jump estimate of `φ(t)`.
    pub phi: SurvivalEstimate,
    pub big_phi: f64,
    /// `2KΦ̂(t)/√(g(t)∨1)`.
    pub predicted: f64,
    /// `φ̂(t)/predicted`.
    pub ratio: f64,
    pub jump_ratio: Option<f64>,
    pub residual: Option<ResidualDiagnostic>,
}

impl AsymptoticRow {
    /// Feasible when the direct bracket sees at least `min_p` survival.
    pub fn feasible(&self, min_p: f64) -> bool {
        self.direct.point >= min_p
    }
}

pub fn asymptotic_rows(f: &BoundaryFunction, curve: &SurvivalCurve) -> Vec<AsymptoticRow> {
    curve
        .points
        .iter()
        .zip(&curve.summaries)
        .map(|(p, s)| {
            let phi = if f.g(s.t) > 1.0 {
                SurvivalEstimate::one_jump(s, p.direct.grid)
            } else {
                p.direct
            };
            let predicted = s.rate * p.phi;
            AsymptoticRow {
                t: s.t,
                direct: p.direct,
                phi,
                big_phi: p.phi,
                predicted,
                ratio: phi.point / predicted,
                jump_ratio: p.jump_ratio.map(|r| r.ratio),
                residual: ResidualDiagnostic::from_summary(f, s).ok(),
            }
        })
        .collect()
}

pub fn write_asymptotics_csv<W: std::io::Write>(rows: &[AsymptoticRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "t",
        "phi_lower",
        "phi_point",
        "phi_upper",
        "phi_stderr",
        "direct_point",
        "Phi_hat",
        "prediction",
        "ratio",
        "big_jump_ratio",
        "H_hat",
        "rho_hat",
        "rho_hat_sqrt_g",
        "identity_gap",
        "identity_se",
    ])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, fmt);
    for r in rows {
        let d = r.residual;
        out.write_record([
            fmt(r.t),
            fmt(r.phi.lower),
            fmt(r.phi.point),
            fmt(r.phi.upper),
            fmt(r.phi.stderr),
            fmt(r.direct.point),
            fmt(r.big_phi),
            fmt(r.predicted),
            fmt(r.ratio),
            opt(r.jump_ratio),
            opt(d.map(|d| d.h_hat)),
            opt(d.map(|d| d.rho_hat)),
            opt(d.map(|d| d.smallness)),
            opt(d.map(|d| d.identity_gap)),
            opt(d.map(|d| d.pooled_se)),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `|ln Φ̂(t) − ln Φ̂(t₀) − E(t)| / E(t)` with `E` the exponent integral.
pub fn log_growth_error(solution: &RenewalSolution, t: f64, big_phi_hat: f64) -> Result<f64> {
    let i = solution.index(t)?;
    let e = solution.exponent_integral[i];
    if !(e > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "no growth between t0 and t = {t}"
        )));
    }
    Ok(((big_phi_hat / solution.phi0).ln() - e).abs() / e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_rate_closed_form() {
        let c: f64 = 9.0;
        let grid = [2.0, 3.0, 7.5];
        let sol = solve_with(1.5, 0.8, &grid, None, |a, b| {
            Ok(2.0 * K * (b - a) / c.sqrt())
        })
        .unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let exact = 0.8 * (2.0 * K * (t - 1.5) / c.sqrt()).exp();
            assert_relative_eq!(sol.phi_solution[i], exact, max_relative = 1e-14);
            // prediction 2KΦ/√c
            assert_relative_eq!(
                2.0 * K * sol.phi_at(t).unwrap() / c.sqrt(),
                2.0 * K * exact / c.sqrt(),
                max_relative = 1e-14
            );
        }
        assert_relative_eq!(sol.phi_at(1.5).unwrap(), 0.8);
    }

    #[test]
    fn log_solution_matches_exponent_integral() {
        let f = BoundaryFunction::sqrt_log(1.5, 0.5).unwrap();
        let grid = [2.0, 10.0, 100.0, 1e4];
        let sol = solve_renewal(&f, 1.0, 0.9, &grid, None).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            assert_relative_eq!(
                (sol.phi_solution[i] / 0.9).ln(),
                sol.exponent_integral[i],
                max_relative = 1e-12
            );
            assert_relative_eq!(
                sol.exponent_integral[i],
                2.0 * K * f.inverse_root_integral(1.0, t).unwrap(),
                max_relative = 1e-9
            );
        }
        assert!(sol.phi_solution.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn transient_exponent_converges_recurrent_diverges() {
        let tr = BoundaryFunction::sqrt_log(1.5, 0.5).unwrap();
        let rec = BoundaryFunction::sqrt_log(1.0, 0.5).unwrap();
        let cut = [1e2, 1e4, 1e8, 1e16, 1e32];
        let a = solve_renewal(&tr, 1.0, 1.0, &cut, None).unwrap();
        let b = solve_renewal(&rec, 1.0, 1.0, &cut, None).unwrap();
        assert!(a.exponent_limit.is_finite());
        assert!(a.exponent_integral.iter().all(|&e| e < a.exponent_limit));
        // γ = 1.5: increments shrink; remaining tail against a high-precision quadrature
        let da: Vec<f64> = a
            .exponent_integral
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect();
        assert!(da.windows(2).all(|w| w[1] < w[0]));
        let rest = a.exponent_limit - a.exponent_integral[4];
        assert_relative_eq!(rest, 0.103_970_110_278_777, max_relative = 1e-7);
        // γ = 1: each squaring of t adds a slowly rising amount, heading for K ln 2
        let db: Vec<f64> = b
            .exponent_integral
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect();
        for (d, want) in db[1..].iter().zip([
            0.217_709_076_589_758,
            0.238_659_324_262_203,
            0.253_281_515_403_171,
        ]) {
            assert_relative_eq!(*d, want, max_relative = 1e-7);
        }
        assert!(db[1..].iter().all(|&d| d < K * 2f64.ln()));
        assert!(b.exponent_limit.is_infinite());
        assert!(predict_phi(&rec, &b, 1e4).unwrap().plateau.is_none());
        let p = predict_phi(&tr, &a, 1e4).unwrap();
        assert!(p.plateau.unwrap() > p.from_solution);
    }

    #[test]
    fn rejects_base_below_floor() {
        let f = BoundaryFunction::sqrt_log(1.5, 0.5).unwrap();
        assert!(solve_renewal(&f, 0.8, 1.0, &[2.0], None).is_err());
        assert!(solve_renewal(&f, 1.0, 0.0, &[2.0], None).is_err());
        assert!(solve_renewal(&f, 2.0, 1.0, &[1.5], None).is_err());
    }

    #[test]
    fn rho_table_integrates_exactly() {
        let r = RhoTable::new(vec![1.0, 2.0, 4.0], vec![0.0, 1.0, -1.0]).unwrap();
        assert_relative_eq!(r.integral(1.0, 4.0).unwrap(), 0.5 + 0.0);
        assert_relative_eq!(
            r.integral(1.5, 3.0).unwrap(),
            0.5 * 0.5 * (0.5 + 1.0) + 0.5 * (1.0 + 0.0)
        );
        assert!(r.integral(0.5, 2.0).is_err());
        let f = BoundaryFunction::sqrt_log(1.5, 0.5).unwrap();
        let sol = solve_renewal(&f, 1.0, 1.0, &[2.0, 4.0], Some(&r)).unwrap();
        assert_relative_eq!(sol.rho_integral[1], 0.5);
        assert_relative_eq!(
            sol.phi_solution[1],
            (sol.exponent_integral[1] + 0.5).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn residual_components_and_identity() {
        let f = BoundaryFunction::sqrt_log(1.5, 0.5).unwrap();
        let cfg = McConfig::new(20_000, 3);
        let curve = build_survival_curve(&f, &[2.0, 5.0], 128, &cfg).unwrap();
        for s in &curve.summaries {
            let d = ResidualDiagnostic::from_summary(&f, s).unwrap();
            assert!(d.survival_without_jump >= 0.0 && d.clock_term >= 0.0);
            assert!(d.identity_holds(4.0), "{d:?}");
            assert!(d.paired_se <= d.pooled_se * 1.01);
            assert!(d.smallness.is_finite());
        }
    }

    #[test]
    fn prediction_anchored_at_mc_base_point() {
        let f = BoundaryFunction::sqrt_log(1.5, 0.5).unwrap();
        let cfg = McConfig::new(50_000, 8);
        let curve = build_survival_curve(&f, &[1.0, 5.0], 256, &cfg).unwrap();
        let (base, far) = (&curve.points[0], &curve.points[1]);
        let sol = solve_renewal(&f, 1.0, base.phi, &[5.0], None).unwrap();
        let pred = predict_phi(&f, &sol, 5.0).unwrap();
        let rel = (pred.from_solution - far.estimate.point).abs() / far.estimate.point;
        assert!(
            rel < 0.25,
            "{} vs {}",
            pred.from_solution,
            far.estimate.point
        );
    }
}
