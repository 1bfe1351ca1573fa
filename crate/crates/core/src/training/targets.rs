use crate::dataset::Segment;
use crate::error::{Error, Result};

/// Per-timestep supervision for one video and one behavior.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepTargets {
    /// 1 when the step centre lies inside a ground-truth segment.
    pub labels: Vec<usize>,
    /// `(D_s, D_e)` in seconds; zero where the regression mask is off.
    pub offsets: Vec<[f64; 2]>,
    pub reg_mask: Vec<bool>,
    /// False for padding.
    pub valid: Vec<bool>,
}

impl TimestepTargets {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Label 1 and offsets `(t − s, e − t)` wherever centre `t` lies in a
/// segment `[s, e]`; label 0 and no regression elsewhere.
pub fn make_targets(segments: &[Segment], centers: &[f64]) -> Result<TimestepTargets> {
    if centers.is_empty() {
        return Err(Error::Invalid("empty time grid".into()));
    }
    let n = centers.len();
    let mut t = TimestepTargets {
        labels: vec![0; n],
        offsets: vec![[0.0; 2]; n],
        reg_mask: vec![false; n],
        valid: vec![true; n],
    };
    for (i, &c) in centers.iter().enumerate() {
        if let Some(s) = segments.iter().find(|s| s.contains(c)) {
            t.labels[i] = 1;
            t.offsets[i] = [c - s.start_s, s.end_s - c];
            t.reg_mask[i] = true;
        }
    }
    Ok(t)
}
