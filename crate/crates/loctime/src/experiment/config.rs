//! TOML experiment configuration with per-section defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryFunction, Table};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SqrtLog,
    Power,
    Table,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt-log" => Ok(Family::SqrtLog),
            "power" => Ok(Family::Power),
            "table" => Ok(Family::Table),
            _ => Err(Error::Config(format!(
                "unknown family '{s}' (sqrt-log, power, table)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub family: Family,
    pub gamma: f64,
    pub beta: f64,
    pub f0: f64,
    /// Two-column CSV `t,f` for the `table` family.
    pub table: Option<PathBuf>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            family: Family::SqrtLog,
            gamma: 1.0,
            beta: 0.25,
            f0: 0.5,
            table: None,
        }
    }
}

impl BoundaryConfig {
    pub fn build(&self) -> Result<BoundaryFunction> {
        match self.family {
            Family::SqrtLog => BoundaryFunction::sqrt_log(self.gamma, self.f0),
            Family::Power => BoundaryFunction::power(self.beta, self.f0),
            Family::Table => {
                let path = self
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::Config("family 'table' needs boundary.table".into()))?;
                BoundaryFunction::tabulated(Table::from_path(path)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub cutoffs: Vec<f64>,
    pub horizon: f64,
    pub epsilon: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            cutoffs: (1..=12).map(|k| 10f64.powi(k)).collect(),
            horizon: 1e30,
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalConfig {
    pub times: Vec<f64>,
    pub n_paths: u64,
    pub grid_points: usize,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        Self {
            times: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            n_paths: 100_000,
            grid_points: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsymptoticsConfig {
    pub times: Vec<f64>,
    pub n_paths: u64,
    pub grid_points: usize,
    /// Rows whose direct estimate falls below this are flagged infeasible.
    pub min_p: f64,
}

impl Default for AsymptoticsConfig {
    fn default() -> Self {
        Self {
            times: vec![1.0, 2.0, 5.0, 10.0, 20.0, 40.0],
            n_paths: 100_000,
            grid_points: 256,
            min_p: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub weights: Vec<String>,
    pub ln_h_min: f64,
    pub ln_h_max: f64,
    pub points_per_decade: usize,
    /// Levels `h` for the Monte Carlo cross-check; empty skips it.
    pub mc_h: Vec<f64>,
    pub mc_n_paths: u64,
    pub mc_grid_points: usize,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            weights: vec!["exp(ln^0.5 h)".into(), "ln h".into(), "h^0.1".into()],
            ln_h_min: 100f64.ln(),
            ln_h_max: 1e6,
            points_per_decade: 8,
            mc_h: Vec::new(),
            mc_n_paths: 100_000,
            mc_grid_points: 256,
        }
    }
}

impl EnvelopeConfig {
    pub fn ln_h_grid(&self) -> Result<Vec<f64>> {
        if !(self.ln_h_min > 0.0 && self.ln_h_max > self.ln_h_min && self.points_per_decade > 0) {
            return Err(Error::Config(
                "envelope needs 0 < ln_h_min < ln_h_max and points_per_decade > 0".into(),
            ));
        }
        let (a, b) = (self.ln_h_min.log10(), self.ln_h_max.log10());
        let n = (((b - a) * self.points_per_decade as f64).ceil() as usize).max(1);
        Ok((0..=n)
            .map(|k| 10f64.powf(a + (b - a) * k as f64 / n as f64))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplePathConfig {
    pub n_samples: u64,
    pub dt: f64,
    /// Clock table nodes; the tail beyond the last node is analytic.
    pub clock_nodes: Vec<f64>,
    pub clock_n_paths: u64,
    pub clock_grid_points: usize,
    pub grid_points: usize,
    pub max_clock: f64,
    pub max_attempts: u64,
    pub tail_duration: f64,
}

impl Default for SamplePathConfig {
    fn default() -> Self {
        Self {
            n_samples: 8,
            dt: 1e-3,
            clock_nodes: (0..=24)
                .map(|k| 0.05 * 1000f64.powf(k as f64 / 24.0))
                .collect(),
            clock_n_paths: 100_000,
            clock_grid_points: 128,
            grid_points: 256,
            max_clock: 200.0,
            max_attempts: 2_000_000,
            tail_duration: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QMarginalSection {
    pub h: f64,
    /// `20h` when absent.
    pub t_prelimit: Option<f64>,
    /// `g(h)·20^{j/4}` when absent.
    pub y_edges: Option<Vec<f64>>,
    pub max_doublings: u32,
    pub n_paths: u64,
    pub grid_points: usize,
}

impl Default for QMarginalSection {
    fn default() -> Self {
        Self {
            h: 4.0,
            t_prelimit: None,
            y_edges: None,
            max_doublings: 0,
            n_paths: 100_000,
            grid_points: 512,
        }
    }
}

/// Complete experiment description; `(config)` alone reproduces every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; outputs do not depend on it.
    pub workers: usize,
    pub out: PathBuf,
    /// Reuse a matching cached run instead of recomputing.
    pub cache: bool,
    pub boundary: BoundaryConfig,
    pub classify: ClassifyConfig,
    pub survival: SurvivalConfig,
    pub asymptotics: AsymptoticsConfig,
    pub envelope: EnvelopeConfig,
    #[serde(rename = "sample-path")]
    pub sample_path: SamplePathConfig,
    #[serde(rename = "q-marginal")]
    pub q_marginal: QMarginalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            out: PathBuf::from("out"),
            cache: true,
            boundary: BoundaryConfig::default(),
            classify: ClassifyConfig::default(),
            survival: SurvivalConfig::default(),
            asymptotics: AsymptoticsConfig::default(),
            envelope: EnvelopeConfig::default(),
            sample_path: SamplePathConfig::default(),
            q_marginal: QMarginalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), c.to_toml().unwrap());
    }

    #[test]
    fn partial_sections_take_defaults() {
        let c = ExperimentConfig::from_toml(
            "seed = 7\n[boundary]\ngamma = 1.5\n[survival]\nn_paths = 2000\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.boundary.gamma, 1.5);
        assert_eq!(c.boundary.f0, 0.5);
        assert_eq!(c.survival.n_paths, 2000);
        assert_eq!(c.survival.times, SurvivalConfig::default().times);
    }

    #[test]
    fn malformed_configs_are_config_errors() {
        for bad in [
            "seed = \"x\"",
            "[boundary]\ngama = 1",
            "[boundary]\nfamily = \"cubic\"",
            "[[oops",
        ] {
            let e = ExperimentConfig::from_toml(bad).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}: {e}");
        }
    }

    #[test]
    fn table_family_needs_a_path() {
        let b = BoundaryConfig {
            family: Family::Table,
            ..BoundaryConfig::default()
        };
        assert_eq!(b.build().unwrap_err().exit_code(), 2);
    }
}
