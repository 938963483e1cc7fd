//! Scenario configuration: JSON ingestion with precise validation errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config at `{path}`: {message}")]
    Invalid { path: String, message: String },
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Margins above this count as strict dominance.
    #[serde(default = "Tolerances::default_dominance")]
    pub dominance_epsilon: f64,
    /// Largest acceptable behavioral verification gap for belief
    /// certificates.
    #[serde(default = "Tolerances::default_verification")]
    pub verification_gap: f64,
}

impl Tolerances {
    fn default_dominance() -> f64 {
        crate::dominance::EPS_DOM
    }
    fn default_verification() -> f64 {
        crate::dominance::VERIFY_TOL
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            dominance_epsilon: Self::default_dominance(),
            verification_gap: Self::default_verification(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Resolutions {
    /// Price nodes of the demand-curve sweep.
    #[serde(default = "Resolutions::d_price")]
    pub price_nodes: usize,
    /// Action nodes of the payoff tensor (odd, so abstention is a node).
    #[serde(default = "Resolutions::d_action")]
    pub action_nodes: usize,
    /// Value nodes (two in the motivating instance).
    #[serde(default = "Resolutions::d_value")]
    pub value_nodes: usize,
    /// Cutoff states of the large-state-space world.
    #[serde(default = "Resolutions::d_z")]
    pub z_nodes: usize,
    /// Price nodes of the dominance/maxmin linear programs.
    #[serde(default = "Resolutions::d_lp")]
    pub lp_price_nodes: usize,
    /// Price nodes of the cutoff-construction quadrature.
    #[serde(default = "Resolutions::d_cutoff")]
    pub cutoff_price_nodes: usize,
}

impl Resolutions {
    fn d_price() -> usize {
        2000
    }
    fn d_action() -> usize {
        5
    }
    fn d_value() -> usize {
        2
    }
    fn d_z() -> usize {
        201
    }
    fn d_lp() -> usize {
        100
    }
    fn d_cutoff() -> usize {
        10_000
    }
}

impl Default for Resolutions {
    fn default() -> Self {
        Self {
            price_nodes: Self::d_price(),
            action_nodes: Self::d_action(),
            value_nodes: Self::d_value(),
            z_nodes: Self::d_z(),
            lp_price_nodes: Self::d_lp(),
            cutoff_price_nodes: Self::d_cutoff(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Ambiguity-aversion coefficient of the smooth model. Required by the
    /// motivating scenario and the demand sweep.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "Params::d_beta_lo")]
    pub beta_lo: f64,
    #[serde(default = "Params::d_beta_hi")]
    pub beta_hi: f64,
    #[serde(default = "Params::d_prior")]
    pub prior_weights: Vec<f64>,
    #[serde(default = "Params::d_utility")]
    pub utility: UtilityParam,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityParam {
    Linear,
    Exponential { a: f64 },
}

impl Params {
    fn d_beta_lo() -> f64 {
        0.25
    }
    fn d_beta_hi() -> f64 {
        0.75
    }
    fn d_prior() -> Vec<f64> {
        vec![0.5, 0.5]
    }
    fn d_utility() -> UtilityParam {
        UtilityParam::Linear
    }

    pub fn require_alpha(&self) -> Result<f64, ConfigError> {
        self.alpha.ok_or_else(|| ConfigError::Invalid {
            path: "params.alpha".into(),
            message: "field is required for this scenario".into(),
        })
    }
}

impl Default for Params {
    fn default() -> Self {
        Self {
            alpha: Some(2.0),
            beta_lo: Self::d_beta_lo(),
            beta_hi: Self::d_beta_hi(),
            prior_weights: Self::d_prior(),
            utility: Self::d_utility(),
        }
    }
}

/// Full scenario configuration. Every field has a default, so `{}` is a
/// valid config except where a scenario requires a parameter explicitly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub resolutions: Resolutions,
    #[serde(default)]
    pub params: Params,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            seed: default_seed(),
            output_dir: None,
            tolerances: Tolerances::default(),
            resolutions: Resolutions::default(),
            params: Params::default(),
        }
    }
}

impl ScenarioConfig {
    /// Structural validation beyond what the schema can express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks: [(&str, usize, usize); 5] = [
            ("resolutions.price_nodes", self.resolutions.price_nodes, 2),
            ("resolutions.action_nodes", self.resolutions.action_nodes, 1),
            ("resolutions.z_nodes", self.resolutions.z_nodes, 2),
            (
                "resolutions.lp_price_nodes",
                self.resolutions.lp_price_nodes,
                2,
            ),
            (
                "resolutions.cutoff_price_nodes",
                self.resolutions.cutoff_price_nodes,
                2,
            ),
        ];
        for (path, value, min) in checks {
            if value < min {
                return Err(ConfigError::Invalid {
                    path: path.into(),
                    message: format!("must be at least {min}, got {value}"),
                });
            }
        }
        if self.resolutions.action_nodes % 2 == 0 {
            return Err(ConfigError::Invalid {
                path: "resolutions.action_nodes".into(),
                message: "must be odd so abstention is a grid node".into(),
            });
        }
        if self.resolutions.lp_price_nodes % 4 != 0 || self.resolutions.cutoff_price_nodes % 4 != 0
        {
            return Err(ConfigError::Invalid {
                path: "resolutions.lp_price_nodes".into(),
                message: "lp_price_nodes and cutoff_price_nodes must be divisible by 4 \
                          so the quarter-mass landmarks fall between nodes"
                    .into(),
            });
        }
        if let Some(a) = self.params.alpha {
            if !(a > 0.0) {
                return Err(ConfigError::Invalid {
                    path: "params.alpha".into(),
                    message: format!("must be positive, got {a}"),
                });
            }
        }
        if !(self.params.beta_lo < self.params.beta_hi)
            || self.params.beta_lo < 0.0
            || self.params.beta_hi > 1.0
        {
            return Err(ConfigError::Invalid {
                path: "params.beta_lo".into(),
                message: "need 0 <= beta_lo < beta_hi <= 1".into(),
            });
        }
        let prior_sum: f64 = self.params.prior_weights.iter().sum();
        if self.params.prior_weights.is_empty()
            || self.params.prior_weights.iter().any(|w| *w < 0.0)
            || (prior_sum - 1.0).abs() > 1e-12
        {
            return Err(ConfigError::Invalid {
                path: "params.prior_weights".into(),
                message: format!("must be a probability vector, sums to {prior_sum}"),
            });
        }
        Ok(())
    }
}

/// Reads and validates a scenario config from a JSON file.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

/// Parses a scenario config from a JSON string.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let config: ScenarioConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    config.validate()?;
    Ok(config)
}
