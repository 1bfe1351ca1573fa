//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use atal::dataset::SynthConfig;
use atal::evaluation::DEFAULT_TIOU_THRESHOLDS;
use atal::model::{write_atomic, ModelConfig};
use atal::postprocess::{NmsConfig, DEFAULT_THRESHOLD};
use atal::seed::derive_seed;
use atal::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub threshold: f64,
    pub nms: NmsConfig,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, nms: NmsConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub tiou_thresholds: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { tiou_thresholds: DEFAULT_TIOU_THRESHOLDS.to_vec() }
    }
}

/// Every setting of a run. When `seed` is present, the seeds of the
/// individual sections are derived from it so that one number controls all
/// randomness.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub postprocess: PostprocessConfig,
    pub evaluation: EvaluationConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    /// Defaults overlaid with `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies the top-level seed to every section.
    pub fn resolve_seeds(&mut self) {
        if let Some(seed) = self.seed {
            self.model.seed = derive_seed(seed, "init", 0);
            self.training.seed = derive_seed(seed, "training", 0);
            self.synth.seed = derive_seed(seed, "synth", 0);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always serialisable")
    }

    /// Writes the resolved configuration next to a command's outputs.
    pub fn echo(&self, dir: &Path, command: &str) -> Result<()> {
        let path = dir.join(format!("{command}-config.toml"));
        write_atomic(&path, self.to_toml().as_bytes()).with_context(|| format!("writing {}", path.display()))
    }
}
