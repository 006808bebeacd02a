//! Versioned checkpoint container.
//!
//! ```text
//! b"SATSYNCK" | u32 LE format version | u32 LE header length | header JSON
//! | params | adam m | adam v            (each: param_count little-endian scalars)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DiffusionConfig;
use super::model::ModelState;
use super::schedule::ScheduleKind;
use super::DiffusionError;
use crate::image::{sha256_hex, write_atomic};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"SATSYNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    pub config: DiffusionConfig,
    pub config_hash: String,
    pub schedule_steps: usize,
    pub schedule_kind: ScheduleKind,
    pub iteration: u64,
    pub param_count: usize,
    /// Free-form roster carried with the weights (city names by class id, etc.).
    #[serde(default)]
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub header: CheckpointHeader,
    pub state: ModelState<F>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(state: ModelState<F>, schedule_steps: usize, class_names: Vec<String>) -> Self {
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            dtype: F::DTYPE.to_string(),
            config_hash: state.config.digest(),
            config: state.config.clone(),
            schedule_steps,
            schedule_kind: ScheduleKind::Linear,
            iteration: state.iteration,
            param_count: state.param_count(),
            class_names,
        };
        Self { header, state }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = self.header.clone();
        header.iteration = self.state.iteration;
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 3 * self.state.params.len() * F::BYTES);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.write_all(&json).expect("vec write");
        for buf in [&self.state.params, &self.state.adam_m, &self.state.adam_v] {
            for &v in buf.iter() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Parses a container. When `expected` is given, its hash must match the
    /// stored configuration.
    pub fn from_bytes(bytes: &[u8], expected: Option<&DiffusionConfig>) -> Result<Self, DiffusionError> {
        let bad = |m: String| DiffusionError::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(bad("truncated header".into()));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
        if header.dtype != F::DTYPE {
            return Err(bad(format!("checkpoint holds {} parameters, requested {}", header.dtype, F::DTYPE)));
        }
        if header.config.digest() != header.config_hash {
            return Err(bad("stored config does not match its hash".into()));
        }
        if let Some(exp) = expected {
            if exp.digest() != header.config_hash {
                return Err(bad(format!(
                    "config hash mismatch: checkpoint {} vs expected {}",
                    header.config_hash,
                    exp.digest()
                )));
            }
        }
        let n = header.param_count;
        let data = &body[hlen..];
        if data.len() != 3 * n * F::BYTES {
            return Err(bad(format!("expected {} parameter bytes, found {}", 3 * n * F::BYTES, data.len())));
        }
        let read = |k: usize| -> Vec<F> {
            data[k * n * F::BYTES..(k + 1) * n * F::BYTES]
                .chunks_exact(F::BYTES)
                .map(F::read_le)
                .collect()
        };
        let state = ModelState::from_parts(header.config.clone(), read(0), read(1), read(2), header.iteration)?;
        Ok(Self { header, state })
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffusionError> {
        write_atomic(path, &self.to_bytes()).map_err(|e| DiffusionError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path, expected: Option<&DiffusionConfig>) -> Result<Self, DiffusionError> {
        let bytes = fs::read(path).map_err(|e| DiffusionError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes, expected)
    }

    /// Content digest of the serialized checkpoint.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn param_digest(&self) -> String {
        let mut buf = Vec::new();
        for &v in &self.state.params {
            v.write_le(&mut buf);
        }
        sha256_hex(&buf)
    }
}

/// One line of the training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetric {
    pub iteration: u64,
    pub loss: f64,
    pub wall_time_s: f64,
}

pub fn append_metric(path: &Path, metric: &TrainMetric) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(metric).expect("metric serializes");
    line.push(b'\n');
    f.write_all(&line)
}
