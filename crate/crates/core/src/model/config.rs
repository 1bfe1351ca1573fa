use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of each input feature vector (two 1024-d I3D streams).
    pub feature_dim: usize,
    pub num_heads: usize,
    /// Hidden width of the encoder MLP.
    pub ff_dim: usize,
    pub num_encoder_blocks: usize,
    /// First trunk layer width of each prediction head.
    pub head_hidden_1: usize,
    /// Second trunk layer width of each prediction head.
    pub head_hidden_2: usize,
    /// Classification outputs; one binary model per behavior.
    pub num_classes: usize,
    /// Inverted-dropout rate applied to the attention and MLP branches in training.
    pub dropout_rate: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 2048,
            num_heads: 16,
            ff_dim: 168,
            num_encoder_blocks: 1,
            head_hidden_1: 1024,
            head_hidden_2: 512,
            num_classes: 2,
            dropout_rate: 0.0,
            epsilon: 1e-5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for desk-scale runs and tests.
    pub fn desk(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            num_heads: 4,
            ff_dim: 64,
            head_hidden_1: 256,
            head_hidden_2: 128,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.feature_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("feature_dim", self.feature_dim),
            ("num_heads", self.num_heads),
            ("ff_dim", self.ff_dim),
            ("num_encoder_blocks", self.num_encoder_blocks),
            ("head_hidden_1", self.head_hidden_1),
            ("head_hidden_2", self.head_hidden_2),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.feature_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "feature_dim {} is not divisible by num_heads {}",
                self.feature_dim, self.num_heads
            )));
        }
        if !self.feature_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "feature_dim {} must be even for the sinusoidal positional encoding",
                self.feature_dim
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}
