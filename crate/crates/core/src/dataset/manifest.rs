//! Corpus layout on disk:
//!
//! ```text
//! <root>/manifest.jsonl      {video_id, subject_id, features, split}
//! <root>/annotations.jsonl   ground-truth segments
//! <root>/features/<id>.atfx  one feature file per video
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotations::{load_annotations, write_annotations, Annotations};
use super::features::{load_features, FeatureSequence};
use crate::error::{Error, Result};
use crate::model::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const FEATURES_DIR: &str = "features";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub video_id: String,
    pub subject_id: String,
    /// Feature file path relative to the corpus root.
    pub features: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |detail: String| Error::Record { path: path.to_path_buf(), line: i + 1, detail };
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        if !seen.insert(entry.video_id.clone()) {
            return Err(fail(format!("duplicate video id {}", entry.video_id)));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).map_err(|e| Error::Invalid(e.to_string()))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// A corpus loaded into memory; `features[i]` belongs to `entries[i]`.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub features: Vec<FeatureSequence>,
    pub annotations: Annotations,
}

impl Corpus {
    /// Indices of the videos in `split`, or all videos when `None`.
    pub fn select(&self, split: Option<Split>) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| split.is_none() || self.entries[i].split == split).collect()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features.first().map(|f| f.dim)
    }

    pub fn index_of(&self, video_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.video_id == video_id)
    }
}

pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let entries = load_manifest(&root.join(MANIFEST_FILE))?;
    let ann_path = root.join(ANNOTATIONS_FILE);
    let annotations = if ann_path.exists() { load_annotations(&ann_path)? } else { Annotations::default() };
    let mut features = Vec::with_capacity(entries.len());
    for e in &entries {
        let path = root.join(&e.features);
        let seq = load_features(&path)?;
        if seq.video_id != e.video_id {
            return Err(Error::Invalid(format!(
                "{} holds video {} but the manifest lists {}",
                path.display(),
                seq.video_id,
                e.video_id
            )));
        }
        if let Some(first) = features.first().map(|f: &FeatureSequence| f.dim) {
            if seq.dim != first {
                return Err(Error::DimensionMismatch { expected: first, found: seq.dim });
            }
        }
        features.push(seq);
    }
    let known: BTreeSet<&str> = entries.iter().map(|e| e.video_id.as_str()).collect();
    for (video, subject) in &annotations.subjects {
        if !known.contains(video.as_str()) {
            return Err(Error::Invalid(format!("annotations mention video {video} missing from the manifest")));
        }
        let listed = &entries.iter().find(|e| &e.video_id == video).expect("known").subject_id;
        if listed != subject {
            return Err(Error::Invalid(format!(
                "video {video} has subject {listed} in the manifest but {subject} in the annotations"
            )));
        }
    }
    Ok(Corpus { root: root.to_path_buf(), entries, features, annotations })
}

/// Writes the whole corpus under `root`.
pub fn write_corpus(
    root: &Path,
    entries: &[ManifestEntry],
    features: &[FeatureSequence],
    annotations: &Annotations,
) -> Result<()> {
    fs::create_dir_all(root.join(FEATURES_DIR)).map_err(|e| Error::io(root, e))?;
    for (e, f) in entries.iter().zip(features) {
        f.save(&root.join(&e.features))?;
    }
    write_annotations(&root.join(ANNOTATIONS_FILE), annotations)?;
    write_manifest(&root.join(MANIFEST_FILE), entries)
}

pub fn feature_path(video_id: &str) -> String {
    format!("{FEATURES_DIR}/{video_id}.atfx")
}
