//! Synthetic corpus with a known signal: unit-variance Gaussian noise plus,
//! inside each ground-truth segment, a per-class signature vector.
//!
//! Signatures are orthonormalised Gaussian vectors rescaled to unit RMS per
//! component (norm `sqrt(D)`), so `snr` is the per-component amplitude ratio
//! of signal to noise. Segment boundaries are continuous in seconds; a window
//! that straddles a boundary carries the signature weighted by the fraction
//! of the window the segment covers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::annotations::{AnnotationRecord, Annotations, Behavior, Segment};
use super::features::FeatureSequence;
use super::grid::{TimeGrid, DEFAULT_FPS, DEFAULT_FRAMES_PER_STEP};
use super::manifest::{feature_path, Corpus, ManifestEntry, Split};
use super::split::train_test_split;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub videos: usize,
    pub steps: usize,
    pub feature_dim: usize,
    pub snr: f64,
    pub frames_per_step: u32,
    pub fps: f64,
    /// Segment count per class per video, drawn uniformly from this inclusive range.
    pub segments_min: usize,
    pub segments_max: usize,
    /// Segment durations in feature windows, drawn uniformly.
    pub duration_min_steps: f64,
    pub duration_max_steps: f64,
    /// Minimum gap between same-class segments, in feature windows.
    pub min_gap_steps: f64,
    pub videos_per_subject: usize,
    /// Placement attempts per segment before the corpus is rejected.
    pub max_retries: usize,
    /// Fraction of subjects assigned to the training split.
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            videos: 50,
            steps: 84,
            feature_dim: 32,
            snr: 4.0,
            frames_per_step: DEFAULT_FRAMES_PER_STEP,
            fps: DEFAULT_FPS,
            segments_min: 3,
            segments_max: 6,
            duration_min_steps: 2.0,
            duration_max_steps: 6.0,
            min_gap_steps: 1.0,
            videos_per_subject: 2,
            max_retries: 1000,
            train_ratio: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.videos == 0 || self.steps == 0 || self.videos_per_subject == 0 {
            return bad("videos, steps and videos_per_subject must be positive".into());
        }
        if self.feature_dim < Behavior::ALL.len() {
            return bad(format!(
                "feature_dim {} cannot hold {} linearly independent signatures",
                self.feature_dim,
                Behavior::ALL.len()
            ));
        }
        if !(self.snr >= 0.0 && self.snr.is_finite()) {
            return bad(format!("snr {} must be finite and non-negative", self.snr));
        }
        if self.segments_min > self.segments_max {
            return bad("segments_min exceeds segments_max".into());
        }
        if !(self.duration_min_steps >= 1.0 && self.duration_min_steps <= self.duration_max_steps) {
            return bad("segment durations must satisfy 1 <= min <= max windows".into());
        }
        if self.duration_max_steps >= self.steps as f64 {
            return bad(format!(
                "maximum segment duration {} windows is not shorter than the {}-step video",
                self.duration_max_steps, self.steps
            ));
        }
        if !(self.min_gap_steps >= 0.0 && self.min_gap_steps.is_finite()) {
            return bad("min_gap_steps must be non-negative".into());
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive".into());
        }
        TimeGrid::new(self.steps, self.frames_per_step, self.fps).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid { steps: self.steps, frames_per_step: self.frames_per_step, fps: self.fps }
    }
}

/// Generated corpus; `features[i]` belongs to `entries[i]`.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub entries: Vec<ManifestEntry>,
    pub features: Vec<FeatureSequence>,
    pub annotations: Annotations,
    /// One scaled signature per behavior, in [`Behavior::ALL`] order.
    pub signatures: Vec<Vec<f64>>,
}

impl SynthCorpus {
    /// In-memory corpus rooted at `root`, as if written there and reloaded.
    pub fn into_corpus(self, root: impl Into<std::path::PathBuf>) -> Corpus {
        Corpus { root: root.into(), entries: self.entries, features: self.features, annotations: self.annotations }
    }
}

/// Orthonormalised (Gram-Schmidt) Gaussian vectors scaled to norm `sqrt(dim)`.
pub fn class_signatures(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "signatures", 0));
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < Behavior::ALL.len() {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let scale = (dim as f64).sqrt();
    basis.into_iter().map(|b| b.into_iter().map(|x| x * scale).collect()).collect()
}

fn place_segments(config: &SynthConfig, rng: &mut ChaCha8Rng, video: usize) -> Result<Vec<Segment>> {
    let w = config.grid().window();
    let duration = config.grid().duration();
    let gap = config.min_gap_steps * w;
    let count = rng.random_range(config.segments_min..=config.segments_max);
    let mut segments: Vec<Segment> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..config.max_retries {
            let len = rng.random_range(config.duration_min_steps..=config.duration_max_steps) * w;
            let start = rng.random_range(0.0..=duration - len);
            let clash = segments.iter().any(|s| start < s.end_s + gap && start + len > s.start_s - gap);
            if !clash {
                segments.push(Segment::new(start, start + len));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "video {video}: could not place {count} segments after {} attempts each",
                config.max_retries
            )));
        }
    }
    segments.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(segments)
}

/// Deterministic in `config.seed`.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let grid = config.grid();
    let w = grid.window();
    let dim = config.feature_dim;
    let signatures = class_signatures(dim, config.seed);
    let mut features = Vec::with_capacity(config.videos);
    let mut records = Vec::new();
    let mut entries = Vec::with_capacity(config.videos);
    for v in 0..config.videos {
        let video_id = format!("v{v:04}");
        let subject_id = format!("S{:03}", v / config.videos_per_subject);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "video", v as u64));
        let mut x: Vec<f64> = (0..config.steps * dim).map(|_| rng.sample(StandardNormal)).collect();
        for behavior in Behavior::ALL {
            let sig = &signatures[behavior.index()];
            for seg in place_segments(config, &mut rng, v)? {
                for i in 0..config.steps {
                    let (lo, hi) = (i as f64 * w, (i + 1) as f64 * w);
                    let cover = (seg.end_s.min(hi) - seg.start_s.max(lo)).max(0.0) / w;
                    if cover > 0.0 {
                        let amp = config.snr * cover;
                        x[i * dim..(i + 1) * dim].iter_mut().zip(sig).for_each(|(a, s)| *a += amp * s);
                    }
                }
                records.push(AnnotationRecord {
                    video_id: video_id.clone(),
                    subject_id: subject_id.clone(),
                    class: behavior,
                    start_s: seg.start_s,
                    end_s: seg.end_s,
                });
            }
        }
        let values = x.into_iter().map(|a| a as f32).collect();
        features.push(FeatureSequence::new(video_id.clone(), grid, dim, values)?);
        entries.push(ManifestEntry { features: feature_path(&video_id), video_id, subject_id, split: None });
    }
    let subjects: Vec<&str> = entries.iter().map(|e| e.subject_id.as_str()).collect();
    if subjects.iter().collect::<std::collections::BTreeSet<_>>().len() >= 2 {
        let (train, _) = train_test_split(&subjects, config.train_ratio, derive_seed(config.seed, "split", 0))?;
        for (i, e) in entries.iter_mut().enumerate() {
            e.split = Some(if train.contains(&i) { Split::Train } else { Split::Test });
        }
    }
    let annotations = Annotations::from_records(records)?;
    Ok(SynthCorpus { entries, features, annotations, signatures })
}
