//! TOML run configuration: model coefficients, solver tolerances and
//! integrator controls, all optional overrides on top of a preset.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::integrator::{InitMode, IntegratorConfig};
use crate::model::{ConductivityModel, PhysicalParams, Polynomial};
use crate::solver::{CorrectorConfig, LinearSolver};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub k0: Option<f64>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub c_m: Option<f64>,
    pub t_m: Option<f64>,
    pub sigma: Option<[f64; 3]>,
    pub theta: Option<f64>,
    /// Polynomial coefficients in ascending degree.
    pub m11: Option<Vec<f64>>,
    pub m22: Option<Vec<f64>>,
    pub m33: Option<Vec<f64>>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// "direct" or "cg"
    pub linear_solver: Option<String>,
    pub cg_tol: Option<f64>,
    pub cg_max_iter: Option<usize>,
    pub newton_tol: Option<f64>,
    pub newton_abs_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub outer_tol: Option<f64>,
    pub outer_max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub sigma: Option<f64>,
    pub t_final: Option<f64>,
    pub reuse_phi: Option<bool>,
    pub stability_warn_threshold: Option<f64>,
    pub nonlinear_exactness: Option<usize>,
    /// "weak" or "analytic"
    pub init_mode: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub snapshot_times: Option<Vec<f64>>,
    /// Evaluate error norms every k-th step (the last step always counts).
    pub error_stride: Option<usize>,
}

pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}

impl FileConfig {
    pub fn apply_model(
        &self,
        params: &mut PhysicalParams,
        model: &mut ConductivityModel,
    ) -> Result<(), ConfigError> {
        let m = &self.model;
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = m.$field { params.$field = v; })*
            };
        }
        set!(k0, tau, alpha, c_m, t_m, alpha1, alpha2, beta1, beta2, gamma1, gamma2, mu1, mu2, eta1, eta2);
        if let Some(s) = m.sigma {
            params.sigma_scatter = s;
        }
        if let Some(theta) = m.theta {
            model.theta = theta;
        }
        if let Some(c) = &m.m11 {
            model.m11 = Polynomial(c.clone());
        }
        if let Some(c) = &m.m22 {
            model.m22 = Polynomial(c.clone());
        }
        if let Some(c) = &m.m33 {
            model.m33 = Polynomial(c.clone());
        }
        params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn apply_corrector(&self, cfg: &mut CorrectorConfig) -> Result<(), ConfigError> {
        let s = &self.solver;
        if let Some(kind) = &s.linear_solver {
            cfg.linear = match kind.as_str() {
                "direct" => LinearSolver::Direct,
                "cg" => LinearSolver::Cg {
                    tol: s.cg_tol.unwrap_or(1e-12),
                    max_iter: s.cg_max_iter.unwrap_or(10_000),
                },
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "unknown linear_solver '{other}' (expected direct|cg)"
                    )))
                }
            };
        }
        if let Some(v) = s.newton_tol {
            cfg.newton.rel_tol = v;
        }
        if let Some(v) = s.newton_abs_tol {
            cfg.newton.abs_tol = v;
        }
        if let Some(v) = s.newton_max_iter {
            cfg.newton.max_iter = v;
        }
        if let Some(v) = s.outer_tol {
            cfg.outer_tol = v;
        }
        if let Some(v) = s.outer_max_iter {
            cfg.outer_max_iter = v;
        }
        Ok(())
    }

    pub fn apply_integrator(&self, cfg: &mut IntegratorConfig) -> Result<(), ConfigError> {
        let s = &self.integrator;
        if let Some(v) = s.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = s.t_final {
            cfg.t_final = v;
        }
        if let Some(v) = s.reuse_phi {
            cfg.reuse_phi = v;
        }
        if let Some(v) = s.stability_warn_threshold {
            cfg.stability_warn_threshold = Some(v);
        }
        if let Some(v) = s.nonlinear_exactness {
            cfg.nonlinear_exactness = Some(v);
        }
        if let Some(mode) = &s.init_mode {
            cfg.init_mode = match mode.as_str() {
                "analytic" => InitMode::Analytic,
                "weak" => InitMode::Weak,
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "unknown init_mode '{other}' (expected weak|analytic)"
                    )))
                }
            };
        }
        self.apply_corrector(&mut cfg.corrector)?;
        Ok(())
    }
}
