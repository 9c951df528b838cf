//! PIPC checkpoints: `"PIPC"`, u32 version, u32 header length, a JSON
//! header, then every parameter as little-endian f32 in directory order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, PipConfig, PipmnModel, Result};
use crate::autodiff::ParamStore;
use crate::data::Task;
use crate::dsp::FeatureKind;
use crate::tensor::Tensor;

pub const PIPC_MAGIC: &[u8; 4] = b"PIPC";
pub const PIPC_VERSION: u32 = 1;
const PREAMBLE: usize = 12;

/// Everything besides the weights needed to use a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub feature_kind: FeatureKind,
    pub task: Task,
    pub classes: Vec<String>,
    /// Free-form provenance such as the effective run config and the
    /// validation report recorded at training time.
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: PipmnModel<f32>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct DirEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the blob section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: PipConfig,
    // stored widened to f64 so the f32 values survive JSON exactly
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    #[serde(flatten)]
    meta: CheckpointMeta,
    params: Vec<DirEntry>,
}

fn bad(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn encode(model: &PipmnModel<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut offset = 0;
    let params = model
        .params
        .iter()
        .map(|p| {
            let e = DirEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                offset,
            };
            offset += p.tensor.len() * 4;
            e
        })
        .collect();
    let header = Header {
        config: model.config.clone(),
        feature_mean: model.feature_mean.iter().map(|&v| v as f64).collect(),
        feature_std: model.feature_std.iter().map(|&v| v as f64).collect(),
        meta: meta.clone(),
        params,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset);
    out.extend_from_slice(PIPC_MAGIC);
    out.extend_from_slice(&PIPC_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params.iter() {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREAMBLE {
        return Err(bad(path, "truncated preamble"));
    }
    if &bytes[..4] != PIPC_MAGIC {
        return Err(bad(path, "bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let version = word(4) as u32;
    if version != PIPC_VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let hlen = word(8);
    if bytes.len() < PREAMBLE + hlen {
        return Err(bad(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..PREAMBLE + hlen])
        .map_err(|e| bad(path, format!("header: {e}")))?;
    let blobs = &bytes[PREAMBLE + hlen..];

    let mut store = ParamStore::new();
    let mut expected_offset = 0;
    for e in &header.params {
        let n: usize = e.shape.iter().product();
        if e.offset != expected_offset {
            return Err(bad(
                path,
                format!(
                    "parameter `{}` has offset {}, expected {expected_offset}",
                    e.name, e.offset
                ),
            ));
        }
        let end = e.offset + n * 4;
        if end > blobs.len() {
            return Err(bad(path, format!("truncated data for parameter `{}`", e.name)));
        }
        let data = blobs[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&e.shape, data).map_err(|err| bad(path, err.to_string()))?;
        store
            .register(e.name.clone(), t)
            .map_err(|err| bad(path, err.to_string()))?;
        expected_offset = end;
    }
    if expected_offset != blobs.len() {
        return Err(bad(
            path,
            format!(
                "{} trailing bytes after parameter data",
                blobs.len() - expected_offset
            ),
        ));
    }
    let mut model = PipmnModel::from_store(header.config, store).map_err(|e| bad(path, e.to_string()))?;
    if !header.feature_mean.is_empty() || !header.feature_std.is_empty() {
        model
            .set_standardization(
                header.feature_mean.iter().map(|&v| v as f32).collect(),
                header.feature_std.iter().map(|&v| v as f32).collect(),
            )
            .map_err(|e| bad(path, e.to_string()))?;
    }
    Ok(Checkpoint {
        model,
        meta: header.meta,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &PipmnModel<f32>, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    let io = |p: &Path, e| ModelError::Io {
        path: p.display().to_string(),
        source: e,
    };
    let tmp = path.with_extension("pipc.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io(&tmp, e))?;
    f.write_all(&encode(model, meta)).map_err(|e| io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    decode(path, &bytes)
}
