//! Binary checkpoint: `"ATAL"`, u32 LE version, u64 LE header length, JSON
//! header, then little-endian f32 parameter blocks in canonical order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{parameter_shapes, HeadStats, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{BatchNormState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATAL";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedStats {
    name: String,
    #[serde(flatten)]
    state: BatchNormState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    behavior: Option<String>,
    tensors: Vec<TensorEntry>,
    running_stats: Vec<NamedStats>,
}

/// Trained parameters together with the behavior class they detect.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub behavior: Option<String>,
}

impl Checkpoint {
    pub fn new(params: ModelParams, behavior: Option<String>) -> Self {
        Self { params, behavior }
    }

    /// Serialises to bytes. Parameters are narrowed to f32.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let named = self.params.weights.named();
        let mut tensors = Vec::with_capacity(named.len());
        let mut offset = 0u64;
        for (name, t) in &named {
            tensors.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
            offset += 4 * t.len() as u64;
        }
        let running_stats = self
            .params
            .norm_states()
            .into_iter()
            .map(|(name, s)| NamedStats { name: name.to_string(), state: s.clone() })
            .collect();
        let header = Header {
            config: self.params.config.clone(),
            behavior: self.behavior.clone(),
            tensors,
            running_stats,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Invalid(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in named {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses bytes produced by [`Checkpoint::to_bytes`]; `path` is used in errors only.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, detail: String| Error::Format { path: path.to_path_buf(), offset: offset as u64, detail };
        if bytes.len() < PREAMBLE {
            return Err(fail(bytes.len(), format!("file is {} bytes, shorter than the preamble", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(fail(0, format!("bad magic {:?}", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let body = (bytes.len() - PREAMBLE) as u64;
        if header_len > body {
            return Err(fail(8, format!("header length {header_len} exceeds remaining {body} bytes")));
        }
        let payload_start = PREAMBLE + header_len as usize;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
            .map_err(|e| fail(PREAMBLE, format!("header: {e}")))?;
        header.config.validate().map_err(|e| fail(PREAMBLE, e.to_string()))?;

        let expected = parameter_shapes(&header.config);
        let expected = expected.named();
        if expected.len() != header.tensors.len() {
            return Err(fail(
                PREAMBLE,
                format!("manifest lists {} tensors, config implies {}", header.tensors.len(), expected.len()),
            ));
        }
        let payload = &bytes[payload_start..];
        let mut cursor = 0u64;
        let mut loaded = Vec::with_capacity(expected.len());
        for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
            if &entry.name != name || &entry.shape != *shape {
                return Err(fail(
                    PREAMBLE,
                    format!("manifest entry {}{:?} where {}{:?} expected", entry.name, entry.shape, name, shape),
                ));
            }
            if entry.offset != cursor {
                return Err(fail(PREAMBLE, format!("{} at offset {}, expected {}", name, entry.offset, cursor)));
            }
            let n: usize = shape.iter().product();
            let end = cursor as usize + 4 * n;
            if end > payload.len() {
                return Err(fail(payload_start + payload.len(), format!("payload truncated inside {name}")));
            }
            let data: Vec<f64> = payload[cursor as usize..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(fail(payload_start + cursor as usize + 4 * i, format!("non-finite value in {name}")));
            }
            loaded.push(Tensor::new(shape, data)?);
            cursor = end as u64;
        }
        if cursor as usize != payload.len() {
            return Err(fail(
                payload_start + cursor as usize,
                format!("{} trailing payload bytes", payload.len() - cursor as usize),
            ));
        }
        let mut loaded = loaded.into_iter();
        let weights = parameter_shapes(&header.config).map(&mut |_, _| loaded.next().expect("counted"));

        let config = header.config;
        let mut params = ModelParams {
            cls_stats: empty_stats(&config),
            reg_stats: empty_stats(&config),
            config,
            weights,
        };
        let names: Vec<&str> = params.norm_states().iter().map(|(n, _)| *n).collect();
        if header.running_stats.len() != names.len() {
            return Err(fail(PREAMBLE, format!("{} running-statistics entries, expected 4", header.running_stats.len())));
        }
        for ((name, slot), stats) in params.norm_states_mut().into_iter().zip(header.running_stats) {
            let width = slot.features();
            if stats.name != name || stats.state.running_mean.len() != width || stats.state.running_var.len() != width
            {
                return Err(fail(PREAMBLE, format!("running statistics {} do not match {name}[{width}]", stats.name)));
            }
            *slot = stats.state;
        }
        Ok(Self { params, behavior: header.behavior })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn empty_stats(config: &ModelConfig) -> HeadStats {
    HeadStats {
        norm1: BatchNormState::new(config.head_hidden_1),
        norm2: BatchNormState::new(config.head_hidden_2),
    }
}

/// Write-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
