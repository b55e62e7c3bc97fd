use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::Reliability;

/// Response to a failed invariant check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkepticalPolicy {
    /// No checks are evaluated.
    #[default]
    Off,
    /// Checks are evaluated and recorded; the iteration is unchanged.
    DetectOnly,
    /// The current cycle is discarded and the last verified iterate restored.
    RejectAndRestart,
    /// Non-finite steps end the cycle early; bound violations are carried along.
    Continue,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckTolerances {
    /// Enables the orthogonality audit: `max_i |v_i . v_{j+1}|` must not exceed it.
    #[serde(default)]
    pub orth_tol: Option<f64>,
    #[serde(default = "default_growth")]
    pub norm_growth_factor: f64,
    #[serde(default = "default_increase")]
    pub residual_increase_tol: f64,
}

fn default_growth() -> f64 {
    4.0
}

fn default_increase() -> f64 {
    1e-8
}

impl Default for CheckTolerances {
    fn default() -> Self {
        CheckTolerances {
            orth_tol: None,
            norm_growth_factor: default_growth(),
            residual_increase_tol: default_increase(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_restart")]
    pub restart: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_maxit")]
    pub maxit: usize,
    /// 0 runs synchronous modified Gram-Schmidt; 1 overlaps each reduction with the next product.
    #[serde(default)]
    pub pipeline_depth: u8,
    #[serde(default)]
    pub skeptical_policy: SkepticalPolicy,
    #[serde(default)]
    pub checks: CheckTolerances,
    /// Consecutive cycle rejections tolerated before giving up.
    #[serde(default = "default_max_rejections")]
    pub max_rejections: usize,
    /// Storage kind for the Krylov basis and work vectors.
    #[serde(default = "default_workspace")]
    pub workspace: Reliability,
}

fn default_restart() -> usize {
    30
}

fn default_tol() -> f64 {
    1e-8
}

fn default_maxit() -> usize {
    1000
}

fn default_max_rejections() -> usize {
    5
}

fn default_workspace() -> Reliability {
    Reliability::Unreliable
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            restart: default_restart(),
            tol: default_tol(),
            maxit: default_maxit(),
            pipeline_depth: 0,
            skeptical_policy: SkepticalPolicy::Off,
            checks: CheckTolerances::default(),
            max_rejections: default_max_rejections(),
            workspace: default_workspace(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.restart == 0 {
            return Err(Error::config("restart must be at least 1"));
        }
        if self.pipeline_depth > 1 {
            return Err(Error::config(format!(
                "pipeline_depth must be 0 or 1, got {}",
                self.pipeline_depth
            )));
        }
        let c = &self.checks;
        if !(c.norm_growth_factor >= 1.0) || !c.norm_growth_factor.is_finite() {
            return Err(Error::config("norm_growth_factor must be at least 1"));
        }
        if !(c.residual_increase_tol >= 0.0) {
            return Err(Error::config("residual_increase_tol must be non-negative"));
        }
        if let Some(o) = c.orth_tol {
            if !(o > 0.0) {
                return Err(Error::config("orth_tol must be positive"));
            }
        }
        Ok(())
    }
}

/// Settings for the inner solve of the fault-tolerant solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    #[serde(default = "default_inner_restart")]
    pub restart: usize,
    #[serde(default = "default_inner_maxit")]
    pub maxit: usize,
    #[serde(default = "default_inner_tol")]
    pub tol: f64,
    /// When false every inner result is accepted unexamined.
    #[serde(default = "yes")]
    pub validate: bool,
}

fn default_inner_restart() -> usize {
    10
}

fn default_inner_maxit() -> usize {
    10
}

fn default_inner_tol() -> f64 {
    1e-3
}

fn yes() -> bool {
    true
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            restart: default_inner_restart(),
            maxit: default_inner_maxit(),
            tol: default_inner_tol(),
            validate: true,
        }
    }
}

impl InnerConfig {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            restart: self.restart,
            tol: self.tol,
            maxit: self.maxit,
            workspace: Reliability::Unreliable,
            ..SolverConfig::default()
        }
    }
}
