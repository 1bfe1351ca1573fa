//! Anchor-free temporal action localization with a self-attention encoder.
//!
//! The pipeline maps a sequence of per-window feature vectors to per-timestep
//! predictions `(D_s, D_e, p_event)`: the distances from the window centre to
//! the start and end of the enclosing behavior and the probability that the
//! behavior is present. Predictions above a decision threshold are decoded to
//! segments `(t - D_s, t + D_e)` and de-duplicated with non-maximum
//! suppression. Evaluation reports frame-level confusion metrics and
//! segment-level average precision at several temporal-IoU thresholds.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod postprocess;
pub mod seed;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
