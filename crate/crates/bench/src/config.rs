//! Experiment configuration.
//!
//! A config file is TOML whose keys mirror [`ExperimentSpec`]; every key is
//! optional and command-line flags override file values. Example:
//!
//! ```toml
//! experiment = "converge"
//! equation = "advection"
//! dim = 1
//! orders = [3, 4, 5, 6, 7, 8]
//! rk = ["rk6"]
//! cells = [4, 8, 16, 32, 64]
//! nk = 4
//! seed = 7
//! cfl = 0.4
//! t_end = 1.0
//! ```

use std::path::{Path, PathBuf};

use ndg_core::{EquationModel, RkScheme, MAX_ORDER};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    #[default]
    Converge,
    Cost,
    Fit,
    Timing,
    Scale,
    Energy,
    Simulate,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Converge => "converge",
            Experiment::Cost => "cost",
            Experiment::Fit => "fit",
            Experiment::Timing => "timing",
            Experiment::Scale => "scale",
            Experiment::Energy => "energy",
            Experiment::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    #[default]
    Advection,
    Euler,
}

impl Equation {
    pub fn name(self) -> &'static str {
        match self {
            Equation::Advection => "advection",
            Equation::Euler => "euler",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RkName {
    Rk3,
    Rk4,
    Rk6,
}

impl RkName {
    pub fn scheme(self) -> RkScheme {
        match self {
            RkName::Rk3 => RkScheme::Rk3,
            RkName::Rk4 => RkScheme::Rk4,
            RkName::Rk6 => RkScheme::Rk6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TransportName {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub equation: Equation,
    pub dim: usize,
    /// Nodes per cell and axis; the scheme's order of accuracy.
    pub orders: Vec<usize>,
    pub rk: Vec<RkName>,
    /// Cells per axis; every grid is square or cubic.
    pub cells: Vec<usize>,
    /// Number of sine modes in the advection initial condition.
    pub nk: usize,
    /// Seed for the random mode amplitudes (required for advection).
    pub seed: Option<u64>,
    pub workers: Vec<usize>,
    pub cfl: f64,
    pub t_end: f64,
    /// Timed steps of fixed-step experiments.
    pub steps: usize,
    /// Untimed steps before every timed loop.
    pub warmup: usize,
    /// Timed repetitions; the fastest is reported.
    pub repeats: usize,
    /// Device power ratings in watts for energy estimates.
    pub power_watts: Vec<f64>,
    /// Advection velocity; defaults to unit speed along x.
    pub velocity: Option<Vec<f64>>,
    pub sound_speed: f64,
    /// Per-worker cells per axis for weak scaling.
    pub weak_cells: Option<usize>,
    /// Target dof for the 2D-vs-3D comparison at matched size.
    pub matched_dof: Option<usize>,
    /// Target errors for the dof fit.
    pub targets: Vec<f64>,
    pub reference_c: f64,
    pub transport: TransportName,
    /// Field dump path for `simulate`.
    pub dump: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            experiment: Experiment::Converge,
            equation: Equation::Advection,
            dim: 1,
            orders: vec![4],
            rk: vec![RkName::Rk6],
            cells: vec![16],
            nk: 4,
            seed: None,
            workers: vec![1],
            cfl: ndg_core::solver::DEFAULT_CFL,
            t_end: 1.0,
            steps: 100,
            warmup: 1,
            repeats: 1,
            power_watts: Vec::new(),
            velocity: None,
            sound_speed: 1.0,
            weak_cells: None,
            matched_dof: None,
            targets: vec![1e-2, 1e-3, 1e-4],
            reference_c: 200.0,
            transport: TransportName::InProcess,
            dump: None,
        }
    }
}

impl ExperimentSpec {
    pub fn new(experiment: Experiment) -> Self {
        ExperimentSpec {
            experiment,
            ..Default::default()
        }
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn velocity_for(&self, dim: usize) -> Vec<f64> {
        match &self.velocity {
            Some(v) => v.iter().copied().chain(std::iter::repeat(0.0)).take(dim).collect(),
            None => (0..dim).map(|d| if d == 0 { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn model(&self, dim: usize) -> Result<EquationModel, ConfigError> {
        let m = match self.equation {
            Equation::Advection => EquationModel::advection(dim, &self.velocity_for(dim)),
            Equation::Euler => EquationModel::isothermal_euler(dim, self.sound_speed),
        };
        m.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Checks every field the chosen experiment reads.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(1..=3).contains(&self.dim) {
            return bad(format!("dim must be 1, 2 or 3, got {}", self.dim));
        }
        if self.orders.is_empty() || self.rk.is_empty() || self.cells.is_empty() || self.workers.is_empty() {
            return bad("orders, rk, cells and workers must be nonempty".into());
        }
        if let Some(&o) = self.orders.iter().find(|&&o| !(2..=MAX_ORDER).contains(&o)) {
            return bad(format!("order {o} outside 2..={MAX_ORDER}"));
        }
        if self.cells.contains(&0) || self.workers.contains(&0) {
            return bad("cell and worker counts must be positive".into());
        }
        if !(self.cfl.is_finite() && self.cfl > 0.0) {
            return bad(format!("cfl must be positive, got {}", self.cfl));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.steps == 0 || self.repeats == 0 {
            return bad("steps and repeats must be at least 1".into());
        }
        if self.power_watts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return bad("power ratings must be positive".into());
        }
        if self.targets.is_empty() || self.targets.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return bad("target errors must lie in (0, 1)".into());
        }
        if self.weak_cells == Some(0) || self.matched_dof == Some(0) {
            return bad("weak_cells and matched_dof must be positive".into());
        }
        if self.equation == Equation::Advection {
            if self.seed.is_none() {
                return bad("--seed is required for advection runs (random mode amplitudes)".into());
            }
            if self.nk == 0 {
                return bad("nk must be at least 1".into());
            }
        }
        if matches!(self.experiment, Experiment::Converge | Experiment::Fit) && self.equation != Equation::Advection {
            return bad(format!("{} needs the advection equation", self.experiment.name()));
        }
        self.model(self.dim)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_toml() {
        let s = ExperimentSpec::from_toml_str(
            "experiment = \"timing\"\nequation = \"euler\"\ndim = 2\norders = [4, 8]\nrk = [\"rk3\"]\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(s.experiment, Experiment::Timing);
        assert_eq!(s.equation, Equation::Euler);
        assert_eq!(s.orders, vec![4, 8]);
        assert_eq!(s.rk, vec![RkName::Rk3]);
        assert_eq!(s.cfl, 0.4);
        s.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentSpec::from_toml_str("ordr = [3]", Path::new("x")).is_err());
        let mut s = ExperimentSpec::new(Experiment::Converge);
        assert!(s.validate().is_err(), "advection without a seed");
        s.seed = Some(1);
        s.validate().unwrap();
        s.orders = vec![1];
        assert!(s.validate().is_err());
        s.orders = vec![4];
        s.cells.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn default_velocity_is_along_x() {
        let s = ExperimentSpec::new(Experiment::Timing);
        assert_eq!(s.velocity_for(3), vec![1.0, 0.0, 0.0]);
    }
}
