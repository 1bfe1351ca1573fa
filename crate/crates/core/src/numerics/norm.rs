use serde::{Deserialize, Serialize};

use super::tape::{NormStats, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Train,
    Infer,
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    /// False until a training-mode pass has updated the statistics.
    pub initialized: bool,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: DEFAULT_MOMENTUM,
            initialized: false,
        }
    }

    pub fn from_stats(mean: Vec<f64>, var: Vec<f64>) -> Self {
        Self { running_mean: mean, running_var: var, momentum: DEFAULT_MOMENTUM, initialized: true }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    /// Exponential moving average towards the batch statistics.
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
        self.initialized = true;
    }
}

/// 1-D batch normalisation over the rows of `x[rows×features]`.
///
/// Training mode normalises with the statistics of the rows flagged in
/// `valid_rows` and folds them into `state`; inference mode uses the running
/// statistics and fails if no training pass has populated them.
pub fn batch_norm_1d(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState,
    mode: NormMode,
    valid_rows: &[bool],
    eps: f64,
) -> Result<Var> {
    match mode {
        NormMode::Train => {
            let (out, stats) = tape.batch_norm(x, gamma, beta, NormStats::Batch { valid_rows }, eps)?;
            let (mean, var) = stats.expect("batch statistics are returned in training mode");
            state.update(&mean, &var);
            Ok(out)
        }
        NormMode::Infer => {
            if !state.initialized {
                return Err(Error::BatchNorm(
                    "inference requested before running statistics were initialised by training".into(),
                ));
            }
            let (out, _) = tape.batch_norm(
                x,
                gamma,
                beta,
                NormStats::Fixed { mean: &state.running_mean, var: &state.running_var },
                eps,
            )?;
            Ok(out)
        }
    }
}
