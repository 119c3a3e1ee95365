//! TOML configuration for the verification harness and the CLI.
//!
//! ```toml
//! [model]
//! A = -0.2
//! F = 0.8
//! C = 0.5
//! D = 1.2
//! M = 10.0
//! I = 0.3
//! K = 2.0
//! P = 0.5
//! Q = 0.2
//!
//! [ambiguity]
//! sigma_lower_sq = 0.01
//! sigma_upper_grid = [0.1, 0.5, 1.0]   # or: sigma_upper_sq = 1.0
//!
//! [agent]
//! lambda = 0.6                          # or: lambda_grid = [...]
//! rho = 0.3                             # or: rho_grid = [...]
//!
//! [test]
//! x_test = 1.0
//! epsilon = 1e-8
//! N = 10000
//!
//! [simulation]                          # optional
//! dt = 1e-3
//! horizon = 20.0
//! n_paths = 1000
//! record_stride = 100
//! random_scenarios = 8
//! ```
//!
//! `sigma_upper_grid` lists volatilities `σ̄`, not variances. When
//! `sigma_lower_sq` is absent it defaults to the smallest `σ̄²` in use.
//! Unknown keys anywhere are an error. Model constants are validated per grid
//! point by the harness, not at load time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AmbiguityBounds, ModelParams, RawModel};
use crate::simulation::{SimConfig, DEFAULT_RANDOM_SCENARIOS};
use crate::stats::MIN_SAMPLES;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    ambiguity: RawAmbiguity,
    agent: RawAgent,
    test: RawTest,
    #[serde(default)]
    simulation: Option<SimulationSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAmbiguity {
    sigma_lower_sq: Option<f64>,
    sigma_upper_sq: Option<f64>,
    sigma_upper_grid: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    lambda: Option<f64>,
    lambda_grid: Option<Vec<f64>>,
    rho: Option<f64>,
    rho_grid: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTest {
    x_test: f64,
    epsilon: f64,
    #[serde(rename = "N")]
    n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default = "default_random")]
    pub random_scenarios: usize,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    20.0
}
fn default_paths() -> usize {
    1000
}
fn default_stride() -> usize {
    100
}
fn default_random() -> usize {
    DEFAULT_RANDOM_SCENARIOS
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            horizon: default_horizon(),
            n_paths: default_paths(),
            record_stride: default_stride(),
            random_scenarios: default_random(),
        }
    }
}

impl SimulationSection {
    pub fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        SimConfig::new(self.dt, self.horizon, self.n_paths, seed)?.with_stride(self.record_stride)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationConfig {
    pub model: RawModel,
    pub sigma_lower_sq: f64,
    /// Upper volatilities `σ̄` (standard deviations).
    pub sigma_upper: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub x_test: f64,
    pub epsilon: f64,
    pub n_samples: usize,
    pub simulation: SimulationSection,
}

fn one_or_grid(name: &str, single: Option<f64>, grid: Option<Vec<f64>>) -> Result<Vec<f64>> {
    let v = match (single, grid) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(format!(
                "give either {name} or {name}_grid, not both"
            )))
        }
        (None, None) => return Err(Error::Config(format!("missing {name} or {name}_grid"))),
        (Some(x), None) => vec![x],
        (None, Some(g)) => g,
    };
    if v.is_empty() {
        return Err(Error::Config(format!("{name}_grid is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{name} contains a non-finite value")));
    }
    Ok(v)
}

impl VerificationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;

        let sigma_upper = match (raw.ambiguity.sigma_upper_sq, raw.ambiguity.sigma_upper_grid) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either sigma_upper_sq or sigma_upper_grid, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "missing sigma_upper_sq or sigma_upper_grid".into(),
                ))
            }
            (Some(s2), None) => {
                if !(s2.is_finite() && s2 > 0.0) {
                    return Err(Error::Config(format!("sigma_upper_sq = {s2} must be > 0")));
                }
                vec![s2.sqrt()]
            }
            (None, Some(g)) => g,
        };
        if sigma_upper.is_empty() {
            return Err(Error::Config("sigma_upper_grid is empty".into()));
        }
        if let Some(s) = sigma_upper.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Config(format!("sigma_upper value {s} must be > 0")));
        }
        let smallest_sq = sigma_upper
            .iter()
            .map(|s| s * s)
            .fold(f64::INFINITY, f64::min);
        let sigma_lower_sq = raw.ambiguity.sigma_lower_sq.unwrap_or(smallest_sq);
        if !(sigma_lower_sq.is_finite() && sigma_lower_sq > 0.0) {
            return Err(Error::Config(format!(
                "sigma_lower_sq = {sigma_lower_sq} must be > 0"
            )));
        }
        if sigma_lower_sq > smallest_sq * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "sigma_lower_sq = {sigma_lower_sq} exceeds the smallest sigma_upper^2 = {smallest_sq}"
            )));
        }

        let lambdas = one_or_grid("lambda", raw.agent.lambda, raw.agent.lambda_grid)?;
        if lambdas.iter().any(|l| *l < 0.0) {
            return Err(Error::Config("lambda values must be >= 0".into()));
        }
        let rhos = one_or_grid("rho", raw.agent.rho, raw.agent.rho_grid)?;

        if !raw.test.x_test.is_finite() {
            return Err(Error::Config("x_test must be finite".into()));
        }
        if !(raw.test.epsilon.is_finite() && raw.test.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon = {} must be > 0",
                raw.test.epsilon
            )));
        }
        if raw.test.n < MIN_SAMPLES {
            return Err(Error::Config(format!(
                "N = {} must be at least {MIN_SAMPLES}",
                raw.test.n
            )));
        }
        let simulation = raw.simulation.unwrap_or_default();
        simulation
            .sim_config(0)
            .map_err(|e| Error::Config(e.to_string()))?;

        Ok(Self {
            model: raw.model,
            sigma_lower_sq,
            sigma_upper,
            lambdas,
            rhos,
            x_test: raw.test.x_test,
            epsilon: raw.test.epsilon,
            n_samples: raw.test.n,
            simulation,
        })
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn model(&self) -> Result<ModelParams> {
        ModelParams::try_from(self.model)
    }

    pub fn bounds(&self, sigma_upper: f64) -> Result<AmbiguityBounds> {
        AmbiguityBounds::new(self.sigma_lower_sq, sigma_upper * sigma_upper)
    }

    /// First entries of the λ, ρ and σ̄ lists.
    pub fn lambda(&self) -> f64 {
        self.lambdas[0]
    }

    pub fn rho(&self) -> f64 {
        self.rhos[0]
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_upper[0]
    }
}

/// Parses raw bytes (the fuzzing entry point).
pub fn parse_config_bytes(bytes: &[u8]) -> Result<VerificationConfig> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| Error::Config(format!("invalid utf-8: {e}")))?;
    VerificationConfig::from_toml_str(text)
}
