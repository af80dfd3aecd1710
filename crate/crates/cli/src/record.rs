//! The `run_record.toml` written next to every run's artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tmvi_core::vi::TrainConfig;

use crate::config::ExperimentConfig;
use crate::RunError;

pub const RECORD_FILE: &str = "run_record.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub family: String,
    pub degree: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub arch: Option<String>,
    pub seed: u64,
    pub tool_version: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_elbo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kl_to_oracle: Option<f64>,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(default)]
    pub modes: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub artifacts: Vec<Artifact>,
    /// Unconstrained variational parameters after training, factor-major.
    #[serde(default)]
    pub final_params: Vec<f64>,
    pub train: TrainConfig,
    pub config: ExperimentConfig,
}

impl RunRecord {
    pub fn new(
        experiment: &str,
        family: &str,
        degree: usize,
        arch: Option<&str>,
        train: TrainConfig,
        config: &ExperimentConfig,
    ) -> Self {
        Self {
            experiment: experiment.to_string(),
            family: family.to_string(),
            degree,
            arch: arch.map(str::to_string),
            seed: train.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            status: "ok".to_string(),
            error: None,
            final_elbo: None,
            kl_to_oracle: None,
            diagnostics: BTreeMap::new(),
            modes: BTreeMap::new(),
            artifacts: Vec::new(),
            final_params: Vec::new(),
            train,
            config: config.clone(),
        }
    }

    pub fn fail(&mut self, err: &RunError) {
        self.status = "failed".to_string();
        self.error = Some(err.to_string());
    }

    pub fn to_toml(&self) -> Result<String, RunError> {
        toml::to_string(self).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(dir: &Path) -> Result<Self, RunError> {
        Self::from_toml(&fs::read_to_string(dir.join(RECORD_FILE))?)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, RunError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RECORD_FILE);
        fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}

/// Writes files under one output directory and remembers their digests.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    written: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), RunError> {
        fs::write(self.dir.join(name), contents)?;
        self.written.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn into_artifacts(self) -> Vec<Artifact> {
        self.written
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn record_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let mut rec = RunRecord::new("bernoulli", "tm", 10, None, TrainConfig::default(), &cfg);
        rec.final_elbo = Some(-1.25);
        rec.kl_to_oracle = Some(0.01);
        rec.diagnostics.insert("tail_mass".into(), 1e-6);
        rec.modes.insert("tm".into(), vec![-2.0, 2.5]);
        rec.artifacts.push(Artifact {
            path: "trace.csv".into(),
            sha256: sha256_hex(b"x"),
        });
        let back = RunRecord::from_toml(&rec.to_toml().unwrap()).unwrap();
        assert_eq!(back, rec);
    }
}
