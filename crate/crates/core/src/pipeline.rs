//! Corpus-level inference and evaluation shared by the command line and the
//! end-to-end tests.

use std::collections::BTreeMap;

use crate::dataset::{Behavior, Corpus, Segment, TimeGrid};
use crate::error::{Error, Result};
use crate::evaluation::{ap_table, rasterize, BehaviorReport, ConfusionCounts, FrameMetrics, VideoDetections};
use crate::model::{ModelParams, TimestepPrediction};
use crate::postprocess::{decode, nms, NmsConfig, PredictionRecord, ScoredSegment};

/// Model output for one whole video.
#[derive(Clone, Debug)]
pub struct VideoInference {
    pub video_id: String,
    pub grid: TimeGrid,
    pub steps: Vec<TimestepPrediction>,
    /// Decoded and suppressed segments in rank order.
    pub segments: Vec<ScoredSegment>,
}

/// Runs each selected video through the model in full, then decodes and
/// suppresses.
pub fn infer_videos(
    params: &ModelParams,
    corpus: &Corpus,
    indices: &[usize],
    behavior: Behavior,
    threshold: f64,
    nms_config: &NmsConfig,
) -> Result<Vec<VideoInference>> {
    indices
        .iter()
        .map(|&i| {
            let seq = &corpus.features[i];
            let grid = seq.grid();
            let steps = params.predict(&seq.to_tensor())?;
            let segments = nms(&decode(&steps, &grid, threshold, behavior)?, nms_config);
            Ok(VideoInference { video_id: seq.video_id.clone(), grid, steps, segments })
        })
        .collect()
}

/// Per-timestep positive decisions `p_event ≥ threshold`.
pub fn step_decisions(steps: &[TimestepPrediction], threshold: f64) -> Vec<bool> {
    steps.iter().map(|p| p.p_event >= threshold).collect()
}

pub fn to_records(inference: &[VideoInference]) -> Vec<PredictionRecord> {
    inference
        .iter()
        .flat_map(|v| {
            v.segments.iter().map(|s| PredictionRecord {
                video_id: v.video_id.clone(),
                class: s.class,
                start_s: s.start_s,
                end_s: s.end_s,
                score: s.score,
            })
        })
        .collect()
}

/// Frame metrics from rasterized predicted segments and AP at each
/// threshold, pooled over `video_ids`. Records of other classes are ignored.
pub fn evaluate_behavior(
    corpus: &Corpus,
    video_ids: &[String],
    records: &[PredictionRecord],
    behavior: Behavior,
    thresholds: &[f64],
) -> Result<BehaviorReport> {
    let mut by_video: BTreeMap<&str, Vec<ScoredSegment>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.class == behavior) {
        by_video.entry(&r.video_id).or_default().push(ScoredSegment {
            start_s: r.start_s,
            end_s: r.end_s,
            score: r.score,
            class: r.class,
        });
    }
    let mut counts = ConfusionCounts::default();
    let mut detections = Vec::with_capacity(video_ids.len());
    for id in video_ids {
        let i = corpus.index_of(id).ok_or_else(|| Error::Invalid(format!("unknown video id {id}")))?;
        let grid = corpus.features[i].grid();
        let predictions = by_video.remove(id.as_str()).unwrap_or_default();
        let ground_truth = corpus.annotations.track(id, behavior).segments;
        let pred_segments: Vec<Segment> = predictions.iter().map(ScoredSegment::segment).collect();
        counts.add(&ConfusionCounts::from_labels(&rasterize(&pred_segments, &grid), &rasterize(&ground_truth, &grid))?);
        detections.push(VideoDetections { predictions, ground_truth });
    }
    if let Some(stray) = by_video.keys().next() {
        return Err(Error::Invalid(format!("predictions for {stray}, which is not among the evaluated videos")));
    }
    Ok(BehaviorReport { behavior, frame: FrameMetrics::from_counts(counts), ap: ap_table(&detections, thresholds) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, Split, SynthConfig};
    use crate::evaluation::ApStatus;

    fn corpus() -> Corpus {
        synth_generate(&SynthConfig { videos: 4, steps: 84, feature_dim: 8, ..SynthConfig::default() })
            .unwrap()
            .into_corpus(".")
    }

    fn perfect(c: &Corpus, b: Behavior) -> Vec<PredictionRecord> {
        c.entries
            .iter()
            .flat_map(|e| {
                c.annotations.track(&e.video_id, b).segments.into_iter().map(|s| PredictionRecord {
                    video_id: e.video_id.clone(),
                    class: b,
                    start_s: s.start_s,
                    end_s: s.end_s,
                    score: 0.9,
                })
            })
            .collect()
    }

    fn ids(c: &Corpus) -> Vec<String> {
        c.entries.iter().map(|e| e.video_id.clone()).collect()
    }

    #[test]
    fn ground_truth_as_predictions_is_perfect() {
        let c = corpus();
        let r = evaluate_behavior(&c, &ids(&c), &perfect(&c, Behavior::Smile), Behavior::Smile, &[0.1, 0.5, 0.7]).unwrap();
        assert_eq!(r.frame.accuracy, 1.0);
        assert!(r.ap.values.iter().all(|v| v.ap == 1.0 && v.status == ApStatus::Ok));
    }

    #[test]
    fn empty_predictions_give_zero_ap_and_full_specificity() {
        let c = corpus();
        let r = evaluate_behavior(&c, &ids(&c), &[], Behavior::Vocal, &[0.5]).unwrap();
        assert_eq!(r.ap.values[0].ap, 0.0);
        assert_eq!(r.frame.specificity, 1.0);
    }

    #[test]
    fn predictions_outside_the_evaluated_set_are_rejected() {
        let c = corpus();
        let test: Vec<String> = c.select(Some(Split::Test)).iter().map(|&i| c.entries[i].video_id.clone()).collect();
        let all = perfect(&c, Behavior::Smile);
        assert!(evaluate_behavior(&c, &test, &all, Behavior::Smile, &[0.5]).is_err());
    }

    #[test]
    fn decisions_use_inclusive_threshold() {
        let p = |v| TimestepPrediction { d_start: 0.0, d_end: 0.0, p_event: v };
        assert_eq!(step_decisions(&[p(0.39), p(0.4), p(0.9)], 0.4), [false, true, true]);
    }
}
