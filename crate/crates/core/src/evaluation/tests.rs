use proptest::prelude::*;

use super::*;
use crate::dataset::Behavior;

fn seg(s: f64, e: f64) -> Segment {
    Segment::new(s, e)
}

fn scored(s: f64, e: f64, score: f64) -> ScoredSegment {
    ScoredSegment { start_s: s, end_s: e, score, class: Behavior::Smile }
}

#[test]
fn rasterize_examples() {
    // Two-second windows: centres 1, 3, 5, 7.
    let grid = TimeGrid::new(4, 60, 30.0).unwrap();
    assert_eq!(rasterize(&[], &grid), [false; 4]);
    assert_eq!(rasterize(&[seg(0.0, 8.0)], &grid), [true; 4]);
    assert_eq!(rasterize(&[seg(2.0, 6.0)], &grid), [false, true, true, false]);
}

#[test]
fn frame_metrics_hand_example() {
    let c = ConfusionCounts { tp: 3, fp: 1, tn: 5, fn_: 1 };
    let m = FrameMetrics::from_counts(c);
    assert!((m.accuracy - 0.8).abs() < 1e-12);
    assert!((m.sensitivity - 0.75).abs() < 1e-12);
    assert!((m.specificity - 5.0 / 6.0).abs() < 1e-12);
    assert!((m.precision - 0.75).abs() < 1e-12);
    assert!((m.f1 - 0.75).abs() < 1e-12);
    assert_eq!(m.degenerate, DegenerateFlags::default());
}

#[test]
fn perfect_and_all_negative_labels() {
    let gt = [true, false, true, true];
    let m = frame_metrics(&gt, &gt).unwrap();
    assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
    let neg = [false; 5];
    let m = frame_metrics(&neg, &neg).unwrap();
    assert_eq!(m.specificity, 1.0);
    assert_eq!(m.sensitivity, 0.0);
    assert!(m.degenerate.sensitivity && m.degenerate.precision);
    assert!(frame_metrics(&neg, &gt).is_err());
}

#[test]
fn ap_identical_predictions_is_one() {
    let gts = [seg(1.0, 3.0), seg(5.0, 9.0)];
    let preds = [scored(1.0, 3.0, 0.9), scored(5.0, 9.0, 0.8)];
    for t in DEFAULT_TIOU_THRESHOLDS {
        assert_eq!(average_precision(&preds, &gts, t).ap, 1.0);
    }
}

#[test]
fn ap_hand_traced_example() {
    // Rank 1 disjoint, rank 2 at IoU 0.6 with the only gt.
    let gts = [seg(0.0, 10.0)];
    let preds = [scored(20.0, 30.0, 0.9), scored(0.0, 6.0, 0.8)];
    let v = average_precision(&preds, &gts, 0.5);
    assert_eq!(v, ApValue { ap: 0.5, status: ApStatus::Ok });
    assert_eq!(average_precision(&preds, &gts, 0.7).ap, 0.0);
}

#[test]
fn ap_flags_missing_ground_truth() {
    let p = [scored(0.0, 1.0, 0.5)];
    assert_eq!(average_precision(&p, &[], 0.5).status, ApStatus::NoGroundTruth);
    assert_eq!(average_precision(&[], &[], 0.5).status, ApStatus::Undefined);
    let row = ap_table(&[VideoDetections::default()], &DEFAULT_TIOU_THRESHOLDS);
    assert_eq!(row.average, None);
}

#[test]
fn ap_table_rows() {
    let gts = vec![seg(1.0, 3.0)];
    let perfect = VideoDetections { predictions: vec![scored(1.0, 3.0, 1.0)], ground_truth: gts.clone() };
    let row = ap_table(&[perfect], &DEFAULT_TIOU_THRESHOLDS);
    assert!(row.values.iter().all(|v| v.ap == 1.0));
    assert_eq!(row.average, Some(1.0));
    let empty = VideoDetections { predictions: vec![], ground_truth: gts };
    let row = ap_table(&[empty], &DEFAULT_TIOU_THRESHOLDS);
    assert!(row.values.iter().all(|v| v.ap == 0.0));
}

#[test]
fn matches_never_cross_videos() {
    let a = VideoDetections { predictions: vec![scored(0.0, 2.0, 0.9)], ground_truth: vec![] };
    let b = VideoDetections { predictions: vec![], ground_truth: vec![seg(0.0, 2.0)] };
    assert_eq!(average_precision_multi(&[a, b], 0.1).ap, 0.0);
}

/// Exhaustive PR-curve construction: for every cutoff k, re-run the
/// matching on the top-k predictions alone and read off precision and
/// recall; AP is `Σ_k P(k)·(R(k) − R(k−1))`.
fn pr_curve_oracle(preds: &[ScoredSegment], gts: &[Segment], thr: f64) -> f64 {
    let mut order: Vec<ScoredSegment> = preds.to_vec();
    order.sort_by(rank_order);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for k in 1..=order.len() {
        let mut used = vec![false; gts.len()];
        let mut tp = 0;
        for p in &order[..k] {
            let mut best: Option<usize> = None;
            for j in 0..gts.len() {
                if !used[j] && best.is_none_or(|b| t_iou(p, &gts[j]) > t_iou(p, &gts[b])) {
                    best = Some(j);
                }
            }
            if let Some(j) = best.filter(|&j| t_iou(p, &gts[j]) >= thr) {
                used[j] = true;
                tp += 1;
            }
        }
        let recall = tp as f64 / gts.len() as f64;
        let precision = tp as f64 / k as f64;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    area
}

fn instance() -> impl Strategy<Value = (Vec<ScoredSegment>, Vec<Segment>)> {
    let preds = prop::collection::vec((0u32..30, 1u32..12, 1u32..50), 0..=10)
        .prop_map(|v| v.into_iter().map(|(s, d, p)| scored(s as f64, (s + d) as f64, p as f64 / 50.0)).collect());
    let gts = prop::collection::vec((0u32..30, 1u32..12), 1..=5)
        .prop_map(|v| v.into_iter().map(|(s, d)| seg(s as f64, (s + d) as f64)).collect());
    (preds, gts)
}

proptest! {
    #[test]
    fn ap_matches_pr_curve_oracle((preds, gts) in instance(), thr in prop::sample::select(vec![0.1, 0.3, 0.5, 0.7])) {
        let ap = average_precision(&preds, &gts, thr).ap;
        prop_assert!((ap - pr_curve_oracle(&preds, &gts, thr)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn ap_non_increasing_in_threshold((preds, gts) in instance()) {
        let row = ap_table(&[VideoDetections { predictions: preds, ground_truth: gts }], &[0.1, 0.3, 0.5, 0.7]);
        for w in row.values.windows(2) {
            prop_assert!(w[1].ap <= w[0].ap + 1e-15, "{:?}", row.values);
        }
    }

    #[test]
    fn f1_invariant_to_tn(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn1 in 0u64..50, tn2 in 0u64..50) {
        let a = FrameMetrics::from_counts(ConfusionCounts { tp, fp, tn: tn1, fn_ });
        let b = FrameMetrics::from_counts(ConfusionCounts { tp, fp, tn: tn2, fn_ });
        prop_assert_eq!(a.f1, b.f1);
    }

    #[test]
    fn accuracy_one_iff_no_errors(pred in prop::collection::vec(any::<bool>(), 1..40), flips in prop::collection::vec(any::<bool>(), 1..40)) {
        let n = pred.len().min(flips.len());
        let gt: Vec<bool> = (0..n).map(|i| pred[i] ^ flips[i]).collect();
        let m = frame_metrics(&pred[..n], &gt).unwrap();
        prop_assert_eq!(m.accuracy == 1.0, m.counts.fp == 0 && m.counts.fn_ == 0);
        prop_assert_eq!(m.counts.total(), n as u64);
    }

    #[test]
    fn rasterized_ground_truth_scores_perfectly(segs in prop::collection::vec((0.0f64..150.0, 0.5f64..20.0), 0..6)) {
        let grid = TimeGrid::with_defaults(84).unwrap();
        let segs: Vec<Segment> = segs.into_iter().map(|(s, d)| seg(s, s + d)).collect();
        let labels = rasterize(&segs, &grid);
        prop_assert_eq!(frame_metrics(&labels, &labels).unwrap().accuracy, 1.0);
    }
}

#[test]
fn report_renders_expected_columns() {
    let gts = vec![seg(1.0, 3.0)];
    let det = VideoDetections { predictions: vec![scored(1.0, 3.0, 1.0)], ground_truth: gts };
    let report = MetricsReport {
        behaviors: vec![BehaviorReport {
            behavior: Behavior::Smile,
            frame: FrameMetrics::from_counts(ConfusionCounts { tp: 3, fp: 1, tn: 5, fn_: 1 }),
            ap: ap_table(&[det], &DEFAULT_TIOU_THRESHOLDS),
        }],
    };
    assert_eq!(report.ap_columns(), ["0.1", "0.3", "0.5", "0.7", "Avg."]);
    let text = report.render_text();
    let ap_header = text.lines().find(|l| l.contains("Avg.")).unwrap();
    assert_eq!(ap_header.split_whitespace().collect::<Vec<_>>(), ["Behavior", "0.1", "0.3", "0.5", "0.7", "Avg."]);
    let frame_header = text.lines().find(|l| l.contains("Sensitivity")).unwrap();
    assert_eq!(
        frame_header.split_whitespace().collect::<Vec<_>>(),
        ["Behavior", "Sensitivity", "Specificity", "F1-score", "Accuracy"]
    );
    let parsed: MetricsReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(parsed, report);
}
