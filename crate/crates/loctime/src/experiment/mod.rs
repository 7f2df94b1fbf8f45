//! Experiment orchestration: configuration, the six commands, caching and manifests.

pub mod cli;
pub mod config;
pub mod manifest;

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::boundary::{check_conditions, integral_test, BoundaryFunction, Classification};
use crate::error::{Error, Result};
use crate::limit::{
    estimate_q_marginal, sample_transient_path, ClockDistribution, Horizon, PathBudgets,
    QMarginalConfig, TransientOutcome,
};
use crate::renewal::{asymptotic_rows, solve_renewal, write_asymptotics_csv, ResidualDiagnostic};
use crate::repulsion::{envelope_criterion, mc_repulsion_check, RepulsionMc, Weight};
use crate::rng::Seed;
use crate::survival::{build_survival_curve, fmt, McConfig};

pub use config::ExperimentConfig;
use manifest::{lookup, publish, sha256_hex, Artifact, CacheKey, ResultManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Classify,
    Survival,
    Asymptotics,
    Envelope,
    SamplePath,
    QMarginal,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Survival => "survival",
            Command::Asymptotics => "asymptotics",
            Command::Envelope => "envelope",
            Command::SamplePath => "sample-path",
            Command::QMarginal => "q-marginal",
        }
    }
}

/// What a finished command left behind.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: Command,
    pub dir: PathBuf,
    pub cached: bool,
    pub manifest: ResultManifest,
    /// Machine-readable headline: the verdict JSON for `classify`.
    pub summary: serde_json::Value,
}

struct Produced {
    artifacts: Vec<Artifact>,
    n_paths: u64,
    summary: serde_json::Value,
}

const SUMMARY_NAME: &str = "summary.json";

fn boundary_key(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let mut b = serde_json::to_value(&cfg.boundary)?;
    if let Some(path) = &cfg.boundary.table {
        // the table's content, not its location, determines the output
        let bytes =
            std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        b["table"] = json!(sha256_hex(&bytes));
    }
    Ok(b)
}

pub fn cache_key(command: Command, cfg: &ExperimentConfig) -> Result<CacheKey> {
    let section = match command {
        Command::Classify => serde_json::to_value(&cfg.classify)?,
        Command::Survival => serde_json::to_value(&cfg.survival)?,
        Command::Asymptotics => serde_json::to_value(&cfg.asymptotics)?,
        Command::Envelope => serde_json::to_value(&cfg.envelope)?,
        Command::SamplePath => serde_json::to_value(&cfg.sample_path)?,
        Command::QMarginal => serde_json::to_value(&cfg.q_marginal)?,
    };
    CacheKey::new(
        command.as_str(),
        json!({ "seed": cfg.seed, "boundary": boundary_key(cfg)?, "section": section }),
    )
}

/// Runs `command`, or returns the cached run with the same key.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<RunReport> {
    if cfg.workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let key = cache_key(command, cfg)?;
    let dir = key.run_dir(&cfg.out);
    if cfg.cache {
        if let Some(manifest) = lookup(&cfg.out, &key) {
            let summary = serde_json::from_slice(&std::fs::read(dir.join(SUMMARY_NAME))?)?;
            return Ok(RunReport {
                command,
                dir,
                cached: true,
                manifest,
                summary,
            });
        }
    }
    let f = cfg.boundary.build()?;
    let start = Instant::now();
    let mut produced = match command {
        Command::Classify => classify(&f, cfg),
        Command::Survival => survival(&f, cfg),
        Command::Asymptotics => asymptotics(&f, cfg),
        Command::Envelope => envelope(&f, cfg),
        Command::SamplePath => sample_path(&f, cfg),
        Command::QMarginal => q_marginal(&f, cfg),
    }?;
    produced
        .artifacts
        .push(Artifact::json(SUMMARY_NAME, &produced.summary)?);
    let manifest = publish(
        &cfg.out,
        &key,
        &produced.artifacts,
        start.elapsed().as_secs_f64(),
        produced.n_paths,
    )?;
    Ok(RunReport {
        command,
        dir,
        cached: false,
        manifest,
        summary: produced.summary,
    })
}

fn mc(n_paths: u64, cfg: &ExperimentConfig, tag: u64) -> McConfig {
    let mut m = McConfig::new(n_paths, cfg.seed).with_workers(cfg.workers);
    m.seed = Seed(cfg.seed).derive(tag);
    m
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn classify(f: &BoundaryFunction, cfg: &ExperimentConfig) -> Result<Produced> {
    let c = &cfg.classify;
    let test = integral_test(f, &c.cutoffs)?;
    let conditions = check_conditions(f, c.horizon, c.epsilon)?;
    let report = json!({
        "classification": test.classification,
        "heuristic": test.heuristic,
        "integral_test": test,
        "conditions": conditions,
    });
    Ok(Produced {
        artifacts: vec![Artifact::json("classify.json", &report)?],
        n_paths: 0,
        summary: json!({ "classification": test.classification, "heuristic": test.heuristic }),
    })
}

fn survival(f: &BoundaryFunction, cfg: &ExperimentConfig) -> Result<Produced> {
    let s = &cfg.survival;
    let curve = build_survival_curve(f, &s.times, s.grid_points, &mc(s.n_paths, cfg, 0))?;
    let csv = csv_bytes(|w| curve.write_csv(w))?;
    let floor_ok = curve.points.iter().all(|p| p.floor_ok());
    Ok(Produced {
        artifacts: vec![
            Artifact::new("survival.csv", csv),
            Artifact::json("survival.json", &curve.points)?,
        ],
        n_paths: s.n_paths,
        summary: json!({ "points": curve.points.len(), "floor_ok": floor_ok }),
    })
}

fn asymptotics(f: &BoundaryFunction, cfg: &ExperimentConfig) -> Result<Produced> {
    let a = &cfg.asymptotics;
    let curve = build_survival_curve(f, &a.times, a.grid_points, &mc(a.n_paths, cfg, 0))?;
    let rows = asymptotic_rows(f, &curve);
    let mut artifacts = vec![Artifact::new(
        "asymptotics.csv",
        csv_bytes(|w| write_asymptotics_csv(&rows, w))?,
    )];

    // renewal prediction from the first usable base point
    let residuals: Vec<ResidualDiagnostic> = rows.iter().filter_map(|r| r.residual).collect();
    let base = curve
        .points
        .iter()
        .find(|p| p.estimate.t >= 1.0 && p.estimate.t > f.f0() && p.phi > 0.0);
    let renewal = match base {
        Some(p) => {
            let t0 = p.estimate.t;
            let grid: Vec<f64> = a.times.iter().copied().filter(|&t| t >= t0).collect();
            let sol = solve_renewal(f, t0, p.phi, &grid, None)?;
            let used: Vec<ResidualDiagnostic> =
                residuals.iter().copied().filter(|r| r.t >= t0).collect();
            artifacts.push(Artifact::new(
                "renewal.csv",
                csv_bytes(|w| sol.write_csv(w, &used))?,
            ));
            Some(json!({ "t0": t0, "Phi0": p.phi, "exponent_limit": sol.exponent_limit }))
        }
        None => None,
    };
    let feasible: Vec<f64> = rows
        .iter()
        .filter(|r| r.feasible(a.min_p))
        .map(|r| r.t)
        .collect();
    artifacts.push(Artifact::json("asymptotics.json", &rows)?);
    Ok(Produced {
        artifacts,
        n_paths: a.n_paths,
        summary: json!({
            "largest_feasible_t": feasible.last(),
            "ratio_at_largest_feasible": rows.iter().rev().find(|r| r.feasible(a.min_p)).map(|r| r.ratio),
            "renewal": renewal,
        }),
    })
}

fn envelope(f: &BoundaryFunction, cfg: &ExperimentConfig) -> Result<Produced> {
    let e = &cfg.envelope;
    let grid = e.ln_h_grid()?;
    let weights = e
        .weights
        .iter()
        .map(|w| w.parse::<Weight>())
        .collect::<Result<Vec<_>>>()?;
    let mc_on = !e.mc_h.is_empty();
    if mc_on && f.classify() != Classification::Recurrent {
        return Err(Error::Config(
            "the Monte Carlo repulsion check needs a recurrent boundary".into(),
        ));
    }
    let (mut artifacts, mut entries, mut n_paths) = (Vec::new(), Vec::new(), 0);
    for (k, w) in weights.iter().enumerate() {
        let v = envelope_criterion(f, w, &grid)?;
        let name = format!("envelope_{k}.csv");
        artifacts.push(Artifact::new(
            name.clone(),
            csv_bytes(|buf| v.write_csv(buf))?,
        ));
        let mut entry = json!({
            "weight": v.weight,
            "file": name,
            "verdict": v.verdict,
            "closed_form": v.closed_form,
            "outside_validated_range": v.outside_validated_range,
            "J_at_largest_h": fmt(v.limit_estimate()),
        });
        if mc_on {
            let rows = e
                .mc_h
                .iter()
                .enumerate()
                .map(|(i, &h)| {
                    mc_repulsion_check(
                        f,
                        w,
                        h,
                        e.mc_grid_points,
                        &mc(e.mc_n_paths, cfg, 1 + i as u64),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            n_paths += e.mc_n_paths * e.mc_h.len() as u64;
            let mc_name = format!("repulsion_mc_{k}.csv");
            artifacts.push(Artifact::new(
                mc_name.clone(),
                csv_bytes(|buf| RepulsionMc::write_csv(&rows, buf))?,
            ));
            entry["mc_file"] = json!(mc_name);
        }
        entries.push(entry);
    }
    Ok(Produced {
        artifacts,
        n_paths,
        summary: json!({ "weights": entries }),
    })
}

fn sample_path(f: &BoundaryFunction, cfg: &ExperimentConfig) -> Result<Produced> {
    let p = &cfg.sample_path;
    if f.classify() != Classification::Transient {
        return Err(Error::Config(
            "sample-path needs a transient boundary".into(),
        ));
    }
    let clock = ClockDistribution::estimate(
        f,
        &p.clock_nodes,
        Horizon::Infinite,
        p.clock_grid_points,
        &mc(p.clock_n_paths, cfg, 0),
    )?;
    let mut budgets = PathBudgets::new(p.dt);
    budgets.grid_points = p.grid_points;
    budgets.max_clock = p.max_clock;
    budgets.max_attempts = p.max_attempts;
    budgets.tail_duration = p.tail_duration;

    let mut artifacts = Vec::new();
    let mut index_rows = Vec::new();
    let seed = Seed(cfg.seed).derive(1);
    for i in 0..p.n_samples {
        match sample_transient_path(f, &clock, &budgets, seed, i)? {
            TransientOutcome::Path(path) => {
                let name = format!("path_{i:04}.csv");
                artifacts.push(Artifact::new(
                    name.clone(),
                    csv_bytes(|w| path.write_csv(w))?,
                ));
                index_rows.push(json!({
                    "index": i,
                    "clock": fmt(path.clock),
                    "file": name,
                    "attempts": path.skeleton.attempts,
                    "excursions": path.excursions.len(),
                    "constraint_holds": path.constraint_holds(),
                    "tail_min_after_plus_one": fmt(path.tail_min_after(path.tail_start + 1.0)),
                }));
            }
            TransientOutcome::OverBudget { clock } => {
                index_rows.push(
                    json!({ "index": i, "clock": fmt(clock), "file": null, "over_budget": true }),
                );
            }
        }
    }
    let clock_csv = csv_bytes(|w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["s", "density", "cdf"])?;
        for ((s, d), c) in clock.s.iter().zip(&clock.density).zip(&clock.cdf) {
            out.write_record([fmt(*s), fmt(*d), fmt(*c)])?;
        }
        out.flush()?;
        Ok(())
    })?;
    artifacts.push(Artifact::new("clock.csv", clock_csv));
    artifacts.push(Artifact::json("samples.json", &index_rows)?);
    Ok(Produced {
        artifacts,
        n_paths: p.clock_n_paths,
        summary: json!({
            "samples": p.n_samples,
            "clock_mass": fmt(clock.total_mass()),
            "Phi_infinity": fmt(clock.big_phi),
        }),
    })
}

fn q_marginal(f: &BoundaryFunction, cfg: &ExperimentConfig) -> Result<Produced> {
    let q = &cfg.q_marginal;
    if f.classify() != Classification::Recurrent {
        return Err(Error::Config(
            "q-marginal needs a recurrent boundary".into(),
        ));
    }
    let mut qc = QMarginalConfig::new(f, q.h);
    if let Some(edges) = &q.y_edges {
        qc.y_edges = edges.clone();
    }
    qc.t_prelimit = q.t_prelimit;
    qc.max_doublings = q.max_doublings;
    qc.grid_points = q.grid_points;
    let est = estimate_q_marginal(f, &qc, &mc(q.n_paths, cfg, 0))?;
    let y0 = 20.0 * f.g(q.h).max(0.0);
    let ratio = est.tail_envelope_ratio(y0).ok();
    Ok(Produced {
        artifacts: vec![
            Artifact::new("q_marginal.csv", csv_bytes(|w| est.write_csv(w))?),
            Artifact::json("q_marginal.json", &est)?,
        ],
        n_paths: q.n_paths,
        summary: json!({
            "t_prelimit": est.t_prelimit,
            "monotone_3se": est.monotone_within(3.0),
            "tail_envelope_ratio": ratio.map(fmt),
            "converged": est.converged,
        }),
    })
}
