//! Experiment configuration: one JSON document describing the simulation,
//! the estimators to compare, solver settings, and output layout. CLI flags
//! override the top-level scalar keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lqem::penalty::{PenaltyFamily, PenaltySpec};
use lqem::sim::SimConfig;
use lqem::smoother::GridConfig;
use lqem::solvers::{Method, SolverOptions};

use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Standard,
    High,
}

impl Profile {
    pub fn grid(&self) -> GridConfig {
        match self {
            Profile::Standard => GridConfig::standard(),
            Profile::High => GridConfig::high(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub family: PenaltyFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Overrides the weight resolved from family/q/tau.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_lock_eps: Option<f64>,
}

impl PenaltyConfig {
    pub fn resolve(&self) -> Result<PenaltySpec, AppError> {
        let base = match self.family {
            PenaltyFamily::None => PenaltySpec::none(),
            PenaltyFamily::Ridge => {
                let tau = self
                    .tau
                    .ok_or_else(|| AppError::config("ridge penalty needs tau"))?;
                PenaltySpec::ridge(tau).map_err(AppError::from_config_err)?
            }
            PenaltyFamily::Lq => {
                let q = self
                    .q
                    .ok_or_else(|| AppError::config("lq penalty needs q"))?;
                let tau = self
                    .tau
                    .ok_or_else(|| AppError::config("lq penalty needs tau"))?;
                PenaltySpec::lq(q, tau).map_err(AppError::from_config_err)?
            }
        };
        let with_weight = match self.weight {
            Some(w) => base.with_weight(w).map_err(AppError::from_config_err)?,
            None => base,
        };
        match self.zero_lock_eps {
            Some(eps) => with_weight
                .with_zero_lock_eps(eps)
                .map_err(AppError::from_config_err),
            None => Ok(with_weight),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    /// Directory-safe label used for trace paths and report rows.
    pub label: String,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltyConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol_theta: f64,
    pub tol_obj: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 300,
            tol_theta: 1e-8,
            tol_obj: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub replicates: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub profile: Profile,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| AppError::config(format!("cannot parse {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), AppError> {
        self.sim.validate().map_err(AppError::from_config_err)?;
        if self.replicates < 1 {
            return Err(AppError::config("replicates must be >= 1"));
        }
        if self.methods.is_empty() {
            return Err(AppError::config("need at least one method"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if m.label.is_empty()
                || !m
                    .label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
            {
                return Err(AppError::config(format!(
                    "label '{}' must be non-empty and filesystem-safe",
                    m.label
                )));
            }
            if !seen.insert(m.label.clone()) {
                return Err(AppError::config(format!("duplicate label '{}'", m.label)));
            }
            // Resolving and validating now surfaces bad method/penalty pairs
            // before any work starts.
            let opts = self.solver_options(m)?;
            opts.validate(self.sim.p)
                .map_err(AppError::from_config_err)?;
        }
        Ok(())
    }

    pub fn solver_options(&self, method: &MethodConfig) -> Result<SolverOptions, AppError> {
        let penalty = match &method.penalty {
            Some(p) => p.resolve()?,
            None => PenaltySpec::none(),
        };
        let mut opts = SolverOptions::new(method.method, penalty);
        opts.max_iters = self.solver.max_iters;
        opts.tol_theta = self.solver.tol_theta;
        opts.tol_obj = self.solver.tol_obj;
        opts.grid = self.profile.grid();
        opts.seed = self.sim.seed;
        Ok(opts)
    }

    /// Zero threshold used when judging recovery for a method.
    pub fn recovery_eps(&self, method: &MethodConfig) -> f64 {
        method
            .penalty
            .as_ref()
            .and_then(|p| p.zero_lock_eps)
            .unwrap_or(lqem::penalty::DEFAULT_ZERO_LOCK_EPS)
    }
}
