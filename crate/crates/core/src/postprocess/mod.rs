//! Per-timestep predictions to scored segments: thresholding, offset
//! decoding and non-maximum suppression.

mod predictions;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::{Behavior, Segment, TimeGrid};
use crate::error::{Error, Result};
use crate::model::TimestepPrediction;

pub use predictions::{load_predictions, write_predictions, PredictionRecord, PredictionsHeader};

pub const DEFAULT_THRESHOLD: f64 = 0.4;
pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_SCORE_FLOOR: f64 = 0.001;
pub const DEFAULT_GAUSSIAN_SIGMA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
    pub class: Behavior,
}

impl ScoredSegment {
    pub fn segment(&self) -> Segment {
        Segment::new(self.start_s, self.end_s)
    }
}

/// Anything with a start and an end in seconds.
pub trait Interval {
    fn bounds(&self) -> (f64, f64);
}

impl Interval for Segment {
    fn bounds(&self) -> (f64, f64) {
        (self.start_s, self.end_s)
    }
}

impl Interval for ScoredSegment {
    fn bounds(&self) -> (f64, f64) {
        (self.start_s, self.end_s)
    }
}

impl Interval for (f64, f64) {
    fn bounds(&self) -> (f64, f64) {
        *self
    }
}

/// Temporal intersection over union.
pub fn t_iou(a: &impl Interval, b: &impl Interval) -> f64 {
    let (a0, a1) = a.bounds();
    let (b0, b1) = b.bounds();
    let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
    let union = (a1 - a0) + (b1 - b0) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Score descending, then earlier start, then shorter duration.
pub fn rank_order(a: &ScoredSegment, b: &ScoredSegment) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start_s.total_cmp(&b.start_s))
        .then((a.end_s - a.start_s).total_cmp(&(b.end_s - b.start_s)))
}

/// One candidate per timestep with `p_event >= threshold`:
/// `(max(0, t - max(0, D_s)), min(duration, t + max(0, D_e)))`.
/// Degenerate candidates are dropped.
pub fn decode(
    predictions: &[TimestepPrediction],
    grid: &TimeGrid,
    threshold: f64,
    class: Behavior,
) -> Result<Vec<ScoredSegment>> {
    if predictions.len() != grid.steps {
        return Err(Error::Shape(format!(
            "{} predictions for a {}-step grid",
            predictions.len(),
            grid.steps
        )));
    }
    let duration = grid.duration();
    let mut out = Vec::new();
    for (i, p) in predictions.iter().enumerate() {
        if !(p.p_event >= threshold) {
            continue;
        }
        let t = grid.center(i);
        let start = (t - p.d_start.max(0.0)).max(0.0);
        let end = (t + p.d_end.max(0.0)).min(duration);
        if start < end {
            out.push(ScoredSegment { start_s: start, end_s: end, score: p.p_event, class });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmsMode {
    /// Discard candidates overlapping a kept one by more than the threshold.
    Hard,
    /// Decay overlapping scores by `1 - iou` when `iou` exceeds the threshold.
    SoftLinear,
    /// Decay every score by `exp(-iou²/σ)`.
    SoftGaussian,
}

impl std::str::FromStr for NmsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "soft-linear" => Ok(Self::SoftLinear),
            "soft-gaussian" => Ok(Self::SoftGaussian),
            _ => Err(Error::Invalid(format!("unknown NMS mode {s:?}; expected hard, soft-linear or soft-gaussian"))),
        }
    }
}

impl std::fmt::Display for NmsMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Hard => "hard",
            Self::SoftLinear => "soft-linear",
            Self::SoftGaussian => "soft-gaussian",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    pub mode: NmsMode,
    pub iou_threshold: f64,
    /// Soft modes drop candidates whose decayed score falls below this.
    pub score_floor: f64,
    pub sigma: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            mode: NmsMode::Hard,
            iou_threshold: DEFAULT_NMS_IOU,
            score_floor: DEFAULT_SCORE_FLOOR,
            sigma: DEFAULT_GAUSSIAN_SIGMA,
        }
    }
}

/// Greedy suppression; output in descending score order.
pub fn nms(candidates: &[ScoredSegment], config: &NmsConfig) -> Vec<ScoredSegment> {
    let mut pool: Vec<ScoredSegment> = candidates.to_vec();
    pool.sort_by(rank_order);
    let mut kept = Vec::new();
    match config.mode {
        NmsMode::Hard => {
            for c in pool {
                if kept.iter().all(|k| t_iou(k, &c) <= config.iou_threshold) {
                    kept.push(c);
                }
            }
        }
        NmsMode::SoftLinear | NmsMode::SoftGaussian => {
            pool.retain(|c| c.score >= config.score_floor);
            while !pool.is_empty() {
                let best = pool.remove(0);
                for c in &mut pool {
                    let iou = t_iou(&best, c);
                    c.score *= match config.mode {
                        NmsMode::SoftLinear if iou > config.iou_threshold => 1.0 - iou,
                        NmsMode::SoftGaussian => (-iou * iou / config.sigma).exp(),
                        _ => 1.0,
                    };
                }
                pool.retain(|c| c.score >= config.score_floor);
                pool.sort_by(rank_order);
                kept.push(best);
            }
        }
    }
    kept
}
