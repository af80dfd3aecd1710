//! Experiment constants, loaded from `config/default.toml` (compiled in) or
//! from a user-supplied file with the same layout.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tmvi_core::models::Activation;
use tmvi_core::vi::TrainConfig;

use crate::RunError;

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDefaults {
    pub samples: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub single_parameter_steps: usize,
    pub nn_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub smoothing_window: usize,
}

impl TrainDefaults {
    pub fn train_config(&self, steps: usize) -> TrainConfig {
        TrainConfig {
            samples: self.samples,
            steps,
            learning_rate: self.learning_rate,
            seed: self.seed,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowInit {
    pub init_low: f64,
    pub init_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianInit {
    pub init_mean: f64,
    pub init_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliSettings {
    pub data: Vec<f64>,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    pub grid_points: usize,
    /// Grid spans `[grid_clip, 1 - grid_clip]`.
    pub grid_clip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchySettings {
    pub data: Vec<f64>,
    pub gamma: f64,
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub grid_low: f64,
    pub grid_high: f64,
    pub grid_points: usize,
    pub histogram_bins: usize,
    pub mode_prominence: f64,
    pub mcmc_steps: usize,
    pub mcmc_burn_in: usize,
    pub mcmc_thin: usize,
    pub mcmc_proposal_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnSettings {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub noise_sd: f64,
    pub prior_sd: f64,
    pub activation: Activation,
    pub small_layers: Vec<usize>,
    pub large_layers: Vec<usize>,
    pub predictive_low: f64,
    pub predictive_high: f64,
    pub predictive_points: usize,
    pub predictive_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainDefaults,
    pub flow: FlowInit,
    pub gaussian: GaussianInit,
    pub bernoulli: BernoulliSettings,
    pub cauchy: CauchySettings,
    pub nn: NnSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, RunError> {
        toml::to_string(self).map_err(|e| RunError::Config(e.to_string()))
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("bundled config parses")
    }
}
