//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TorusGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Stability,
    Monotonicity,
    Lojasiewicz,
    LinearStability,
    Roundtrip,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Stability => "stability",
            ExperimentKind::Monotonicity => "monotonicity",
            ExperimentKind::Lojasiewicz => "lojasiewicz",
            ExperimentKind::LinearStability => "linear-stability",
            ExperimentKind::Roundtrip => "roundtrip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    Conformal,
    TensorSlice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dim: usize,
    /// One entry per axis, or a single entry used for every axis.
    pub resolution: Vec<usize>,
    pub periods: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            resolution: vec![32],
            periods: vec![1.0],
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<TorusGrid> {
        let expand = |v: &[f64], what: &str| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; self.dim]),
                n if n == self.dim => Ok(v.to_vec()),
                n => Err(Error::Config(format!("{what} has {n} entries for dimension {}", self.dim))),
            }
        };
        let res: Vec<f64> = self.resolution.iter().map(|&n| n as f64).collect();
        let res: Vec<usize> = expand(&res, "grid.resolution")?.iter().map(|&n| n as usize).collect();
        let periods = expand(&self.periods, "grid.periods")?;
        TorusGrid::new(&res, &periods).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub kind: PerturbationKind,
    pub amplitude: f64,
    /// Highest wave number per axis in the random fields.
    pub max_frequency: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            kind: PerturbationKind::Conformal,
            amplitude: 0.05,
            max_frequency: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub phase_switch: f64,
    pub t_end: f64,
    pub c_cfl: f64,
    pub eigen_tol: f64,
    /// Fixed step; the stability limit is used when absent.
    pub dt: Option<f64>,
    /// Wall-clock budget in seconds.
    pub wall_budget: Option<f64>,
    pub ric_tol: f64,
    pub grad_tol: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            phase_switch: 1.0,
            t_end: 5.0,
            c_cfl: 0.2,
            eigen_tol: 1e-10,
            dt: None,
            wall_budget: None,
            ric_tol: 1e-6,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeighborhoodConfig {
    pub radius: f64,
    pub proxy_order: usize,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        Self {
            radius: 0.5,
            proxy_order: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub eta: f64,
    pub inequality_theta: f64,
    pub evolution_tol: f64,
    pub n_modes: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            inequality_theta: 0.1,
            evolution_tol: 1e-8,
            n_modes: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub neighborhood: NeighborhoodConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seed: 0,
            output_dir: None,
            grid: GridConfig::default(),
            perturbation: PerturbationConfig::default(),
            flow: FlowConfig::default(),
            neighborhood: NeighborhoodConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        let p = &self.perturbation;
        if !(p.amplitude >= 0.0) {
            return Err(Error::Config(format!("amplitude must be >= 0, got {}", p.amplitude)));
        }
        if p.max_frequency == 0 && p.amplitude > 0.0 {
            return Err(Error::Config("max_frequency must be at least 1".into()));
        }
        let f = &self.flow;
        if !(f.t_end > 0.0) {
            return Err(Error::Config(format!("flow.t_end must be positive, got {}", f.t_end)));
        }
        if self.experiment == ExperimentKind::Stability && !(f.t_end > f.phase_switch && f.phase_switch >= 0.0) {
            return Err(Error::Config(format!(
                "flow.t_end {} must exceed flow.phase_switch {}",
                f.t_end, f.phase_switch
            )));
        }
        if !(f.c_cfl > 0.0) || !(f.eigen_tol > 0.0) {
            return Err(Error::Config("flow.c_cfl and flow.eigen_tol must be positive".into()));
        }
        if let Some(dt) = f.dt {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("flow.dt must be positive, got {dt}")));
            }
        }
        if !(self.neighborhood.radius > 0.0) || self.neighborhood.proxy_order > 3 {
            return Err(Error::Config("neighborhood.radius must be positive and proxy_order at most 3".into()));
        }
        let d = &self.diagnostics;
        if !(d.eta > 0.0 && d.eta < 1.0) {
            return Err(Error::Config(format!("diagnostics.eta must lie in (0,1), got {}", d.eta)));
        }
        Ok(())
    }

    /// Applies a resolution override to every axis.
    pub fn set_resolution(&mut self, n: usize) {
        self.grid.resolution = vec![n];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("experiment = \"stability\"\n").unwrap();
        assert_eq!(cfg.grid.build().unwrap().resolution(), &[32, 32]);
        assert_eq!(cfg.perturbation.amplitude, 0.05);
        assert_eq!(cfg.flow.phase_switch, 1.0);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("experiment = \"stability\"\n[flow]\nt_edn = 3.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = ExperimentConfig::from_toml("experiment = \"stability\"\ncolour = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn two_phase_needs_room_after_switch() {
        let err = ExperimentConfig::from_toml("experiment = \"stability\"\n[flow]\nt_end = 0.5\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
