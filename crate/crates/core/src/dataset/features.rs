//! `ATFX` feature files: `"ATFX"`, u32 version, u32 id length, id bytes,
//! u32 steps, u32 dim, u32 frames per step, f64 fps, then `steps·dim` f32
//! values. All integers and floats little-endian.

use std::fs;
use std::path::Path;

use super::grid::TimeGrid;
use crate::error::{Error, Result};
use crate::model::write_atomic;
use crate::numerics::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"ATFX";
pub const FEATURE_VERSION: u32 = 1;

/// One video's per-step feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub steps: usize,
    pub dim: usize,
    pub frames_per_step: u32,
    pub fps: f64,
    /// Row-major `steps × dim`.
    pub values: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, grid: TimeGrid, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 || values.len() != grid.steps * dim {
            return Err(Error::Shape(format!(
                "{} values for {} steps of dimension {dim}",
                values.len(),
                grid.steps
            )));
        }
        Ok(Self {
            video_id: video_id.into(),
            steps: grid.steps,
            dim,
            frames_per_step: grid.frames_per_step,
            fps: grid.fps,
            values,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid { steps: self.steps, frames_per_step: self.frames_per_step, fps: self.fps }
    }

    /// Widened to 64-bit for the model.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.steps, self.dim], self.values.iter().map(|&v| v as f64).collect())
            .expect("extents validated at construction")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id = self.video_id.as_bytes();
        let mut out = Vec::with_capacity(32 + id.len() + 4 * self.values.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(self.steps as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.frames_per_step.to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses an `ATFX` image; `path` is used in error messages only.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4, "magic")? != FEATURE_MAGIC {
            return Err(r.fail(0, format!("bad magic {:?}", &bytes[..4])));
        }
        let version = r.u32("version")?;
        if version != FEATURE_VERSION {
            return Err(r.fail(4, format!("unsupported version {version}")));
        }
        let id_len = r.u32("video id length")? as usize;
        let id_at = r.pos;
        let id = r.take(id_len, "video id")?;
        let video_id = String::from_utf8(id.to_vec()).map_err(|_| r.fail(id_at, "video id is not UTF-8".into()))?;
        let steps_at = r.pos;
        let steps = r.u32("step count")? as usize;
        let dim_at = r.pos;
        let dim = r.u32("feature dimension")? as usize;
        let fps_step_at = r.pos;
        let frames_per_step = r.u32("frames per step")?;
        let fps_at = r.pos;
        let fps = f64::from_le_bytes(r.take(8, "fps")?.try_into().expect("8 bytes"));
        if steps == 0 {
            return Err(r.fail(steps_at, "step count is zero".into()));
        }
        if dim == 0 {
            return Err(r.fail(dim_at, "feature dimension is zero".into()));
        }
        if frames_per_step == 0 {
            return Err(r.fail(fps_step_at, "frames per step is zero".into()));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(r.fail(fps_at, format!("invalid fps {fps}")));
        }
        let payload = &bytes[r.pos..];
        let expected = steps as u64 * dim as u64 * 4;
        if payload.len() as u64 != expected {
            let floats = payload.len() / 4;
            let detail = if payload.len().is_multiple_of(4) && floats.is_multiple_of(steps) {
                format!(
                    "header dim {dim} but payload holds {steps} rows of {} floats",
                    floats / steps
                )
            } else {
                format!("payload is {} bytes, header implies {expected} ({steps} x {dim} f32)", payload.len())
            };
            return Err(r.fail(r.pos, detail));
        }
        let values: Vec<f32> =
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(r.fail(r.pos + 4 * i, "non-finite feature value".into()));
        }
        Ok(Self { video_id, steps, dim, frames_per_step, fps, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

pub fn load_features(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::from_bytes(&bytes, path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, detail: String) -> Error {
        Error::Format { path: self.path.to_path_buf(), offset: offset as u64, detail }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}
