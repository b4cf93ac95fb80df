//! Engine configuration, loaded from TOML. Every field has a default so a
//! file only needs the values it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::direct_match::GateConfig;
use crate::runner::RunnerConfig;
use crate::smc::SmcConfig;
use crate::ui_graph::FuzzyTolerance;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("invalid value for {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub knn_k: usize,
    /// Neighbours kept per step subgraph.
    pub neighbor_budget: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            knn_k: 8,
            neighbor_budget: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Allow the direct-match shortcut before SMC.
    pub fast_path: bool,
    pub gate: GateConfig,
    pub similarity: FuzzyTolerance,
    pub graph: GraphConfig,
    pub smc: SmcConfig,
    pub runner: RunnerConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            fast_path: true,
            gate: GateConfig::default(),
            similarity: FuzzyTolerance::default(),
            graph: GraphConfig::default(),
            smc: SmcConfig::default(),
            runner: RunnerConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Readiness threshold used by the runner and the bench.
    pub fn c_min(&self) -> f64 {
        self.smc.confidence.c_min
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field, reason: &str| {
            Err(ConfigError::Invalid {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.gate.tau > 0.0) {
            return bad("gate.tau", "must be positive");
        }
        if self.smc.n_particles == 0 {
            return bad("smc.n_particles", "must be at least 1");
        }
        if !(self.smc.ess_frac > 0.0 && self.smc.ess_frac <= 1.0) {
            return bad("smc.ess_frac", "must lie in (0, 1]");
        }
        if !(self.smc.max_dbeta > 0.0) {
            return bad("smc.max_dbeta", "must be positive");
        }
        let p = &self.smc.prior;
        if !(p.lo > 0.0 && p.lo < 1.0 && p.hi > 1.0) {
            return bad("smc.prior", "scale bounds must satisfy 0 < lo < 1 < hi");
        }
        if !(p.weight > 0.0 && p.weight < 1.0) || !(p.sigma_x > 0.0 && p.sigma_y > 0.0) {
            return bad("smc.prior", "mixture weight must lie in (0, 1) and spreads be positive");
        }
        if !(self.smc.tolerance.sigma_base > 0.0) {
            return bad("smc.tolerance.sigma_base", "must be positive");
        }
        if self.runner.retry_budget == 0 {
            return bad("runner.retry_budget", "must be at least 1");
        }
        Ok(())
    }
}
