use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FRAMES_PER_STEP: u32 = 64;
pub const DEFAULT_FPS: f64 = 30.0;

/// Mapping between feature timesteps and seconds. Each step covers
/// `frames_per_step` frames and is anchored at its window centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub steps: usize,
    pub frames_per_step: u32,
    pub fps: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, frames_per_step: u32, fps: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("time grid has no timesteps".into()));
        }
        if frames_per_step == 0 || !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Invalid(format!(
                "invalid time mapping: {frames_per_step} frames per step at {fps} fps"
            )));
        }
        Ok(Self { steps, frames_per_step, fps })
    }

    pub fn with_defaults(steps: usize) -> Result<Self> {
        Self::new(steps, DEFAULT_FRAMES_PER_STEP, DEFAULT_FPS)
    }

    /// Seconds spanned by one step.
    pub fn window(&self) -> f64 {
        self.frames_per_step as f64 / self.fps
    }

    /// Centre of step `i`: `(i·frames_per_step + frames_per_step/2) / fps`.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 * self.frames_per_step as f64 + self.frames_per_step as f64 / 2.0) / self.fps
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.center(i)).collect()
    }

    /// End of the last window in seconds.
    pub fn duration(&self) -> f64 {
        (self.steps as f64 * self.frames_per_step as f64) / self.fps
    }

    /// Step whose centre is nearest to `t`, clamped to the grid.
    pub fn nearest_step(&self, t: f64) -> usize {
        let f = self.frames_per_step as f64;
        let i = ((t * self.fps - f / 2.0) / f).round();
        (i.max(0.0) as usize).min(self.steps - 1)
    }
}
