//! Experiment configuration: a single TOML file, with command-line flags and
//! the `CLIPGRAIN_SEED` environment variable layered on top.
//!
//! Seed precedence: `--seeds` flag, then `CLIPGRAIN_SEED`, then the config
//! file's `seeds` list, then the default. The output directory resolves as
//! `--out`, then `[output] dir`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use clipgrain_core::models::synth::SyntheticSpec;
use clipgrain_core::models::ModelKind;
use clipgrain_core::{ClippingPolicy, Model, SecretSharerSettings, TrainConfig};

use crate::CliError;

pub const SEED_ENV_VAR: &str = "CLIPGRAIN_SEED";

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config(format!("{path}: {}", message.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub data: DataSection,
    pub train: TrainSection,
    #[serde(default = "default_policies")]
    pub policies: Vec<ClippingPolicy<f64>>,
    #[serde(default)]
    pub secret_sharer: SecretSharerSettings<f64>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_policies() -> Vec<ClippingPolicy<f64>> {
    vec![ClippingPolicy::None]
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<FileData>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub cores: usize,
    pub per_core_batch: usize,
    pub learning_rate: f64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_eval_every() -> usize {
    100
}

impl TrainSection {
    /// Materializes a runnable config for one (policy, seed) pair.
    pub fn to_train_config(&self, policy: ClippingPolicy<f64>, seed: u64) -> TrainConfig<f64> {
        TrainConfig {
            iterations: self.iterations,
            cores: self.cores,
            per_core_batch: self.per_core_batch,
            learning_rate: self.learning_rate,
            policy,
            seed,
            eval_every: self.eval_every,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_sweep_bounds")]
    pub bounds: Vec<f64>,
}

fn default_sweep_bounds() -> Vec<f64> {
    vec![1.0, 2.5, 5.0, 10.0, 100.0]
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { bounds: default_sweep_bounds() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    /// Full validation before any training starts; every rejection carries
    /// the offending field path.
    pub fn validate(&self) -> Result<(), CliError> {
        match self.data.source {
            DataSource::Synthetic => {
                let spec = self
                    .data
                    .synthetic
                    .as_ref()
                    .ok_or_else(|| invalid("data.synthetic", "required when source = \"synthetic\""))?;
                spec.validate()
                    .map_err(|e| invalid("data.synthetic", e.to_string()))?;
                let model = Model::new(self.model, spec.dim)
                    .map_err(|e| invalid("model", e.to_string()))?;
                if !spec.matches_model(&model) {
                    return Err(invalid(
                        "data.synthetic.task",
                        "task/classes do not match the model kind",
                    ));
                }
            }
            DataSource::File => {
                if self.data.file.is_none() {
                    return Err(invalid("data.file", "required when source = \"file\""));
                }
            }
        }
        if self.train.cores == 0 {
            return Err(invalid("train.cores", "must be >= 1"));
        }
        if self.train.per_core_batch == 0 {
            return Err(invalid("train.per_core_batch", "must be >= 1"));
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            return Err(invalid("train.learning_rate", "must be positive and finite"));
        }
        if self.train.eval_every == 0 {
            return Err(invalid("train.eval_every", "must be >= 1"));
        }
        if self.policies.is_empty() {
            return Err(invalid("policies", "must list at least one policy"));
        }
        for (i, policy) in self.policies.iter().enumerate() {
            policy
                .validate(self.train.per_core_batch)
                .map_err(|e| invalid(&format!("policies[{i}]"), e.to_string()))?;
        }
        self.secret_sharer
            .validate()
            .map_err(|e| invalid("secret_sharer", e.to_string()))?;
        if self.sweep.bounds.is_empty() {
            return Err(invalid("sweep.bounds", "must be non-empty"));
        }
        if let Some(b) = self
            .sweep
            .bounds
            .iter()
            .find(|b| !(**b > 0.0 && b.is_finite()))
        {
            return Err(invalid("sweep.bounds", format!("bound {b} must be positive and finite")));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "must list at least one seed"));
        }
        Ok(())
    }

    /// Applies flag and environment overrides (flags > env > file).
    pub fn resolve(
        mut self,
        flag_seeds: Option<&[u64]>,
        env_seeds: Option<&str>,
        flag_out: Option<&Path>,
    ) -> Result<ResolvedConfig, CliError> {
        if let Some(seeds) = flag_seeds {
            self.seeds = seeds.to_vec();
        } else if let Some(raw) = env_seeds {
            self.seeds = parse_seed_list(raw)?;
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "resolved seed list is empty"));
        }
        let out_dir = flag_out
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.output.dir.clone());
        Ok(ResolvedConfig { config: self, out_dir })
    }
}

/// Comma-separated seed list, as accepted by `--seeds` and `CLIPGRAIN_SEED`.
pub fn parse_seed_list(raw: &str) -> Result<Vec<u64>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| CliError::Config(format!("bad seed `{s}` in seed list")))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
}
