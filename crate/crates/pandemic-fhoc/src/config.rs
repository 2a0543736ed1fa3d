//! Run configuration. Command-line flags override the file, which overrides
//! the defaults.

use std::path::{Path, PathBuf};

use pandemic_fhoc_core::fhoc::FhocOptions;
use pandemic_fhoc_core::training::TrainingHyper;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Number of `eps` values on the default grid.
    pub eps_grid: usize,
    /// Explicit `eps` values; replaces the grid when set.
    pub eps: Option<Vec<f64>>,
    pub horizon_days: f64,
    /// Split evenly between constant and day-to-day random schedules.
    pub random_scenarios: usize,
    /// Adds the last observed NPI vector held over the horizon.
    pub fixed: bool,
    /// Observation variance of the control-solve filter.
    pub solver_r: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            eps_grid: 25,
            eps: None,
            horizon_days: 60.0,
            random_scenarios: 50,
            fixed: false,
            solver_r: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub days: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig { days: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub models: PathBuf,
    pub cors_origin: String,
    /// Sweeps with more points than this always run as polled jobs.
    pub async_threshold: usize,
    /// Longest a request waits before it is answered with a job handle.
    pub timeout_ms: u64,
    pub cache_capacity: usize,
    pub max_days: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            models: PathBuf::from("models"),
            cors_origin: "http://localhost:5173".into(),
            async_threshold: 40,
            timeout_ms: 30_000,
            cache_capacity: 64,
            max_days: 365,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub training: TrainingHyper,
    pub fhoc: FhocOptions,
    pub sweep: SweepConfig,
    pub forecast: ForecastConfig,
    pub service: ServiceConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        Config::from_toml(&text).map_err(|e| Error::file(path, e))
    }

    /// The file if given, the defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Config::default()), Config::load)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Flag, then environment (resolved by the flag parser), then file, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(0)
    }
}
