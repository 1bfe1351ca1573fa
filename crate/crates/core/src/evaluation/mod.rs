//! Frame-level confusion metrics and segment-level average precision.

mod report;

use serde::{Deserialize, Serialize};

use crate::dataset::{Segment, TimeGrid};
use crate::error::{Error, Result};
use crate::postprocess::{rank_order, t_iou, ScoredSegment};

pub use report::{BehaviorReport, MetricsReport};

pub const DEFAULT_TIOU_THRESHOLDS: [f64; 4] = [0.1, 0.3, 0.5, 0.7];

/// Label per step: whether its centre lies inside any segment.
pub fn rasterize(segments: &[Segment], grid: &TimeGrid) -> Vec<bool> {
    (0..grid.steps).map(|i| segments.iter().any(|s| s.contains(grid.center(i)))).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_labels(pred: &[bool], gt: &[bool]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!("{} predicted labels for {} ground-truth labels", pred.len(), gt.len())));
        }
        let mut c = Self::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Metrics whose denominator was zero (reported as 0).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub accuracy: bool,
    pub sensitivity: bool,
    pub specificity: bool,
    pub precision: bool,
    pub f1: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub degenerate: DegenerateFlags,
}

fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

impl FrameMetrics {
    pub fn from_counts(c: ConfusionCounts) -> Self {
        let mut d = DegenerateFlags::default();
        let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
        let accuracy = ratio(tp + tn, tp + fp + tn + fn_, &mut d.accuracy);
        let sensitivity = ratio(tp, tp + fn_, &mut d.sensitivity);
        let specificity = ratio(tn, tn + fp, &mut d.specificity);
        let precision = ratio(tp, tp + fp, &mut d.precision);
        let f1 = ratio(2.0 * precision * sensitivity, precision + sensitivity, &mut d.f1);
        Self { counts: c, accuracy, sensitivity, specificity, precision, f1, degenerate: d }
    }
}

pub fn frame_metrics(pred: &[bool], gt: &[bool]) -> Result<FrameMetrics> {
    Ok(FrameMetrics::from_counts(ConfusionCounts::from_labels(pred, gt)?))
}

/// Why an AP value is not an ordinary score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApStatus {
    Ok,
    /// Predictions without any ground truth: AP is 0.
    NoGroundTruth,
    /// Neither predictions nor ground truth: excluded from averages.
    Undefined,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApValue {
    pub ap: f64,
    pub status: ApStatus,
}

/// Predictions and ground truth of one video for one behavior.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VideoDetections {
    pub predictions: Vec<ScoredSegment>,
    pub ground_truth: Vec<Segment>,
}

/// True-positive flags of the pooled, rank-ordered predictions together
/// with the number of ground-truth segments.
fn match_detections(videos: &[VideoDetections], threshold: f64) -> (Vec<bool>, usize) {
    let mut pooled: Vec<(usize, ScoredSegment)> =
        videos.iter().enumerate().flat_map(|(v, d)| d.predictions.iter().map(move |p| (v, *p))).collect();
    pooled.sort_by(|a, b| rank_order(&a.1, &b.1).then(a.0.cmp(&b.0)));
    let mut matched: Vec<Vec<bool>> = videos.iter().map(|d| vec![false; d.ground_truth.len()]).collect();
    let flags = pooled
        .iter()
        .map(|(v, p)| {
            let gts = &videos[*v].ground_truth;
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if matched[*v][j] {
                    continue;
                }
                let iou = t_iou(p, g);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, iou)) if iou >= threshold => {
                    matched[*v][j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect();
    (flags, videos.iter().map(|d| d.ground_truth.len()).sum())
}

/// Non-interpolated area under the precision-recall curve, pooling
/// predictions across videos; matches never cross videos.
pub fn average_precision_multi(videos: &[VideoDetections], threshold: f64) -> ApValue {
    let (flags, n_gt) = match_detections(videos, threshold);
    if n_gt == 0 {
        let status = if flags.is_empty() { ApStatus::Undefined } else { ApStatus::NoGroundTruth };
        return ApValue { ap: 0.0, status };
    }
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, &hit) in flags.iter().enumerate() {
        if hit {
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    ApValue { ap: ap / n_gt as f64, status: ApStatus::Ok }
}

pub fn average_precision(predictions: &[ScoredSegment], ground_truth: &[Segment], threshold: f64) -> ApValue {
    average_precision_multi(
        &[VideoDetections { predictions: predictions.to_vec(), ground_truth: ground_truth.to_vec() }],
        threshold,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub thresholds: Vec<f64>,
    pub values: Vec<ApValue>,
    /// Mean over thresholds whose AP is defined; `None` when none is.
    pub average: Option<f64>,
}

pub fn ap_table(videos: &[VideoDetections], thresholds: &[f64]) -> ApRow {
    let values: Vec<ApValue> = thresholds.iter().map(|&t| average_precision_multi(videos, t)).collect();
    let defined: Vec<f64> = values.iter().filter(|v| v.status != ApStatus::Undefined).map(|v| v.ap).collect();
    let average = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    ApRow { thresholds: thresholds.to_vec(), values, average }
}

#[cfg(test)]
mod tests;
