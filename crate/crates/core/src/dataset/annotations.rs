//! Ground-truth behavior segments, stored as JSON lines
//! `{video_id, subject_id, class, start_s, end_s}`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    LookFace,
    LookObject,
    Smile,
    Vocal,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [Behavior::LookFace, Behavior::LookObject, Behavior::Smile, Behavior::Vocal];

    pub fn name(self) -> &'static str {
        match self {
            Behavior::LookFace => "look_face",
            Behavior::LookObject => "look_object",
            Behavior::Smile => "smile",
            Behavior::Vocal => "vocal",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&b| b == self).expect("listed")
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Behavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|b| b.name()).collect();
            Error::Invalid(format!("unknown behavior class {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Closed time interval in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
}

impl Segment {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t <= self.end_s
    }
}

/// Segments of one behavior in one video, sorted and non-overlapping.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationTrack {
    pub video_id: String,
    pub behavior: Behavior,
    pub segments: Vec<Segment>,
}

impl AnnotationTrack {
    pub fn empty(video_id: impl Into<String>, behavior: Behavior) -> Self {
        Self { video_id: video_id.into(), behavior, segments: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub subject_id: String,
    pub class: Behavior,
    pub start_s: f64,
    pub end_s: f64,
}

/// Sorts by start and merges segments that overlap or touch.
pub fn merge_segments(mut segments: Vec<Segment>) -> Vec<Segment> {
    segments.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for s in segments {
        match out.last_mut() {
            Some(last) if s.start_s <= last.end_s => last.end_s = last.end_s.max(s.end_s),
            _ => out.push(s),
        }
    }
    out
}

/// All ground truth of a corpus, keyed by video and behavior.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Annotations {
    pub subjects: BTreeMap<String, String>,
    tracks: BTreeMap<(String, Behavior), Vec<Segment>>,
}

impl Annotations {
    pub fn from_records(records: impl IntoIterator<Item = AnnotationRecord>) -> Result<Self> {
        let mut raw: BTreeMap<(String, Behavior), Vec<Segment>> = BTreeMap::new();
        let mut subjects = BTreeMap::new();
        for (i, r) in records.into_iter().enumerate() {
            validate_record(&r).map_err(|d| Error::Invalid(format!("record {}: {d}", i + 1)))?;
            check_subject(&mut subjects, &r).map_err(|d| Error::Invalid(format!("record {}: {d}", i + 1)))?;
            raw.entry((r.video_id, r.class)).or_default().push(Segment::new(r.start_s, r.end_s));
        }
        let tracks = raw.into_iter().map(|(k, v)| (k, merge_segments(v))).collect();
        Ok(Self { subjects, tracks })
    }

    /// Track for `video_id` and `behavior`; empty when nothing was annotated.
    pub fn track(&self, video_id: &str, behavior: Behavior) -> AnnotationTrack {
        AnnotationTrack {
            video_id: video_id.to_string(),
            behavior,
            segments: self.tracks.get(&(video_id.to_string(), behavior)).cloned().unwrap_or_default(),
        }
    }

    pub fn video_ids(&self) -> Vec<&str> {
        self.subjects.keys().map(String::as_str).collect()
    }

    /// Records in (video, class, start) order.
    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.tracks
            .iter()
            .flat_map(|((video, class), segs)| {
                let subject = self.subjects.get(video).cloned().unwrap_or_default();
                segs.iter().map(move |s| AnnotationRecord {
                    video_id: video.clone(),
                    subject_id: subject.clone(),
                    class: *class,
                    start_s: s.start_s,
                    end_s: s.end_s,
                })
            })
            .collect()
    }

    pub fn segment_count(&self, behavior: Behavior) -> usize {
        self.tracks.iter().filter(|((_, b), _)| *b == behavior).map(|(_, s)| s.len()).sum()
    }
}

fn validate_record(r: &AnnotationRecord) -> std::result::Result<(), String> {
    if !(r.start_s.is_finite() && r.end_s.is_finite()) {
        return Err(format!("non-finite bounds ({}, {})", r.start_s, r.end_s));
    }
    if r.start_s < 0.0 {
        return Err(format!("negative start {}", r.start_s));
    }
    if r.start_s >= r.end_s {
        return Err(format!("start {} is not before end {}", r.start_s, r.end_s));
    }
    Ok(())
}

fn check_subject(subjects: &mut BTreeMap<String, String>, r: &AnnotationRecord) -> std::result::Result<(), String> {
    match subjects.get(&r.video_id) {
        Some(s) if *s != r.subject_id => {
            Err(format!("video {} listed under subjects {s} and {}", r.video_id, r.subject_id))
        }
        Some(_) => Ok(()),
        None => {
            subjects.insert(r.video_id.clone(), r.subject_id.clone());
            Ok(())
        }
    }
}

pub fn load_annotations(path: &Path) -> Result<Annotations> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut subjects = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |detail: String| Error::Record { path: path.to_path_buf(), line: i + 1, detail };
        let r: AnnotationRecord = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        validate_record(&r).map_err(|d| fail(format!("{d} in {line}")))?;
        check_subject(&mut subjects, &r).map_err(fail)?;
        records.push(r);
    }
    Annotations::from_records(records)
}

pub fn write_annotations(path: &Path, annotations: &Annotations) -> Result<()> {
    let mut out = String::new();
    for r in annotations.records() {
        out.push_str(&serde_json::to_string(&r).map_err(|e| Error::Invalid(e.to_string()))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
