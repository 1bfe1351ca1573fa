//! Predictions file: a header line followed by one JSON record per segment,
//! `{video_id, class, start_s, end_s, score}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NmsMode;
use crate::dataset::Behavior;
use crate::error::{Error, Result};
use crate::model::write_atomic;

pub const PREDICTIONS_FORMAT: &str = "atal-predictions";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionsHeader {
    pub format: String,
    pub version: u32,
    pub threshold: f64,
    pub nms: NmsMode,
    /// Behaviors that were inferred; evaluation covers exactly these.
    pub classes: Vec<Behavior>,
    /// Videos that were inferred, including those without any segment.
    pub videos: Vec<String>,
}

impl PredictionsHeader {
    pub fn new(threshold: f64, nms: NmsMode, classes: Vec<Behavior>, videos: Vec<String>) -> Self {
        Self { format: PREDICTIONS_FORMAT.into(), version: 1, threshold, nms, classes, videos }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub video_id: String,
    pub class: Behavior,
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
}

pub fn write_predictions(path: &Path, header: &PredictionsHeader, records: &[PredictionRecord]) -> Result<()> {
    let enc = |e: serde_json::Error| Error::Invalid(e.to_string());
    let mut out = serde_json::to_string(header).map_err(enc)?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(enc)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_predictions(path: &Path) -> Result<(PredictionsHeader, Vec<PredictionRecord>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let fail = |line: usize, detail: String| Error::Record { path: path.to_path_buf(), line, detail };
    let (i, first) = lines.next().ok_or_else(|| fail(1, "missing header line".into()))?;
    let header: PredictionsHeader = serde_json::from_str(first).map_err(|e| fail(i + 1, format!("header: {e}")))?;
    if header.format != PREDICTIONS_FORMAT || header.version != 1 {
        return Err(fail(i + 1, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let r: PredictionRecord = serde_json::from_str(line).map_err(|e| fail(i + 1, e.to_string()))?;
        if !(r.start_s >= 0.0 && r.start_s < r.end_s && (0.0..=1.0).contains(&r.score)) {
            return Err(fail(i + 1, format!("malformed segment ({}, {}, {})", r.start_s, r.end_s, r.score)));
        }
        if !header.classes.contains(&r.class) || !header.videos.contains(&r.video_id) {
            return Err(fail(i + 1, format!("{} / {} not declared in the header", r.video_id, r.class)));
        }
        records.push(r);
    }
    Ok((header, records))
}
