//! Command line front end; the binary only forwards to [`main`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::{ExperimentConfig, Family};
use super::{run, Command};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "loctime",
    version,
    about = "Brownian motion with local time kept under a boundary"
)]
pub struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Recompute even when a matching cached run exists.
    #[arg(long, global = true)]
    pub no_cache: bool,
    #[command(flatten)]
    pub boundary: BoundaryArgs,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    /// sqrt-log, power or table.
    #[arg(long, global = true)]
    pub family: Option<String>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub f0: Option<f64>,
    #[arg(long, global = true)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Transient/recurrent verdict with the integral test and grid conditions.
    Classify {
        #[arg(long, value_delimiter = ',')]
        cutoffs: Option<Vec<f64>>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Bracketed survival curve and occupation integral.
    Survival {
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long)]
        n_paths: Option<u64>,
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Monte Carlo against the one-jump prediction and renewal solution.
    Asymptotics {
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long)]
        n_paths: Option<u64>,
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Repulsion-envelope criterion, optionally with a Monte Carlo check.
    Envelope {
        /// Repeatable, e.g. `--weight "ln h" --weight "h^0.1"`.
        #[arg(long = "weight")]
        weights: Vec<String>,
        #[arg(long)]
        ln_h_max: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        mc_h: Option<Vec<f64>>,
        #[arg(long)]
        mc_n_paths: Option<u64>,
    },
    /// Sample paths of the transient limit process.
    SamplePath {
        #[arg(long)]
        n_samples: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        clock_n_paths: Option<u64>,
    },
    /// Pre-limit Q-marginal of the inverse local time at level h.
    QMarginal {
        #[arg(long)]
        h: Option<f64>,
        #[arg(long = "t")]
        t_prelimit: Option<f64>,
        #[arg(long)]
        max_doublings: Option<u32>,
        #[arg(long)]
        n_paths: Option<u64>,
        #[arg(long)]
        grid_points: Option<usize>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Cli {
    /// The file configuration (or defaults) with every flag applied on top.
    pub fn resolve(self) -> Result<(Command, ExperimentConfig)> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::default(),
        };
        set(&mut c.seed, self.seed);
        set(&mut c.workers, self.workers);
        set(&mut c.out, self.out);
        if self.no_cache {
            c.cache = false;
        }
        let b = self.boundary;
        if let Some(fam) = b.family {
            c.boundary.family = fam.parse::<Family>()?;
        }
        set(&mut c.boundary.gamma, b.gamma);
        set(&mut c.boundary.beta, b.beta);
        set(&mut c.boundary.f0, b.f0);
        if b.table.is_some() {
            c.boundary.table = b.table;
        }
        let cmd = match self.command {
            Cmd::Classify { cutoffs, horizon } => {
                set(&mut c.classify.cutoffs, cutoffs);
                set(&mut c.classify.horizon, horizon);
                Command::Classify
            }
            Cmd::Survival {
                times,
                n_paths,
                grid_points,
            } => {
                set(&mut c.survival.times, times);
                set(&mut c.survival.n_paths, n_paths);
                set(&mut c.survival.grid_points, grid_points);
                Command::Survival
            }
            Cmd::Asymptotics {
                times,
                n_paths,
                grid_points,
            } => {
                set(&mut c.asymptotics.times, times);
                set(&mut c.asymptotics.n_paths, n_paths);
                set(&mut c.asymptotics.grid_points, grid_points);
                Command::Asymptotics
            }
            Cmd::Envelope {
                weights,
                ln_h_max,
                mc_h,
                mc_n_paths,
            } => {
                if !weights.is_empty() {
                    c.envelope.weights = weights;
                }
                set(&mut c.envelope.ln_h_max, ln_h_max);
                set(&mut c.envelope.mc_h, mc_h);
                set(&mut c.envelope.mc_n_paths, mc_n_paths);
                Command::Envelope
            }
            Cmd::SamplePath {
                n_samples,
                dt,
                clock_n_paths,
            } => {
                set(&mut c.sample_path.n_samples, n_samples);
                set(&mut c.sample_path.dt, dt);
                set(&mut c.sample_path.clock_n_paths, clock_n_paths);
                Command::SamplePath
            }
            Cmd::QMarginal {
                h,
                t_prelimit,
                max_doublings,
                n_paths,
                grid_points,
            } => {
                set(&mut c.q_marginal.h, h);
                if t_prelimit.is_some() {
                    c.q_marginal.t_prelimit = t_prelimit;
                }
                set(&mut c.q_marginal.max_doublings, max_doublings);
                set(&mut c.q_marginal.n_paths, n_paths);
                set(&mut c.q_marginal.grid_points, grid_points);
                Command::QMarginal
            }
        };
        Ok((cmd, c))
    }
}

fn hint(e: &Error) -> Option<&'static str> {
    match e {
        Error::Budget(_) => Some("raise the attempt budget or lower the horizon"),
        Error::Insufficient(_) => Some("increase n_paths or use a shorter horizon"),
        Error::OutOfRange(_) => Some("extend the table or grid to cover the requested range"),
        _ => None,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = cli.resolve().and_then(|(cmd, cfg)| run(cmd, &cfg));
    match outcome {
        Ok(report) => {
            let line = serde_json::json!({
                "command": report.command,
                "dir": report.dir,
                "cached": report.cached,
                "summary": report.summary,
            });
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = hint(&e) {
                eprintln!("hint: {h}");
            }
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    main_with(std::env::args_os())
}
