use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ApRow, ApStatus, FrameMetrics};
use crate::dataset::Behavior;

pub const FRAME_COLUMNS: [&str; 4] = ["Sensitivity", "Specificity", "F1-score", "Accuracy"];
pub const AVERAGE_COLUMN: &str = "Avg.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub behavior: Behavior,
    pub frame: FrameMetrics,
    pub ap: ApRow,
}

/// Per-behavior frame metrics and AP table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub behaviors: Vec<BehaviorReport>,
}

fn threshold_label(t: f64) -> String {
    format!("{t}")
}

fn cell(v: f64) -> String {
    format!("{v:.4}")
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serialisable")
    }

    /// Column labels of the AP table, e.g. `0.1 0.3 0.5 0.7 Avg.`.
    pub fn ap_columns(&self) -> Vec<String> {
        let thresholds = self.behaviors.first().map(|b| b.ap.thresholds.clone()).unwrap_or_default();
        thresholds.into_iter().map(threshold_label).chain([AVERAGE_COLUMN.to_string()]).collect()
    }

    /// Aligned plain-text tables: frame-level metrics, then AP by t-IoU.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let name_width = self.behaviors.iter().map(|b| b.behavior.name().len()).max().unwrap_or(0).max(8);

        out.push_str("Frame-level metrics\n");
        let _ = write!(out, "{:<name_width$}", "Behavior");
        for c in FRAME_COLUMNS {
            let _ = write!(out, "  {c:>11}");
        }
        out.push('\n');
        for b in &self.behaviors {
            let f = &b.frame;
            let _ = write!(out, "{:<name_width$}", b.behavior.name());
            for v in [f.sensitivity, f.specificity, f.f1, f.accuracy] {
                let _ = write!(out, "  {:>11}", cell(v));
            }
            out.push('\n');
        }

        out.push_str("\nAverage precision by t-IoU threshold\n");
        let _ = write!(out, "{:<name_width$}", "Behavior");
        for c in self.ap_columns() {
            let _ = write!(out, "  {c:>6}");
        }
        out.push('\n');
        for b in &self.behaviors {
            let _ = write!(out, "{:<name_width$}", b.behavior.name());
            for v in &b.ap.values {
                let text = if v.status == ApStatus::Undefined { "n/a".to_string() } else { cell(v.ap) };
                let _ = write!(out, "  {text:>6}");
            }
            let avg = b.ap.average.map(cell).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(out, "  {avg:>6}");
        }
        out
    }
}
