//! PIPF feature cache: `"PIPF"`, u32 version, u32 frames, u32 dims, then
//! `frames · dims` little-endian f32 values, row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{DspError, FeatureMatrix};

pub const PIPF_MAGIC: &[u8; 4] = b"PIPF";
pub const PIPF_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

fn malformed(path: &Path, detail: impl Into<String>) -> DspError {
    DspError::MalformedPipf {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn io(path: &Path, e: std::io::Error) -> DspError {
    DspError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn encode(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data.len() * 4);
    out.extend_from_slice(PIPF_MAGIC);
    out.extend_from_slice(&PIPF_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.frames as u32).to_le_bytes());
    out.extend_from_slice(&(m.dims as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize), DspError> {
    if bytes.len() < HEADER_LEN {
        return Err(malformed(path, "truncated header"));
    }
    if &bytes[..4] != PIPF_MAGIC {
        return Err(malformed(path, "bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != PIPF_VERSION {
        return Err(malformed(path, format!("unsupported version {version}")));
    }
    Ok((word(8) as usize, word(12) as usize))
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<FeatureMatrix, DspError> {
    let (frames, dims) = parse_header(path, bytes)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != frames * dims * 4 {
        return Err(malformed(
            path,
            format!(
                "expected {} payload bytes, found {}",
                frames * dims * 4,
                body.len()
            ),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(frames, dims, data)
}

pub fn write_pipf(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<(), DspError> {
    let path = path.as_ref();
    // write-then-rename so an interrupted run never leaves a half file
    let tmp = path.with_extension("pipf.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io(&tmp, e))?;
    f.write_all(&encode(m)).map_err(|e| io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

pub fn read_pipf(path: impl AsRef<Path>) -> Result<FeatureMatrix, DspError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    decode(path, &bytes)
}

/// Returns `(frames, dims)` if `path` is a complete PIPF file, reading only
/// the header.
pub fn read_pipf_header(path: impl AsRef<Path>) -> Result<(usize, usize), DspError> {
    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(|e| io(path, e))?;
    let mut header = [0u8; HEADER_LEN];
    f.read_exact(&mut header)
        .map_err(|_| malformed(path, "truncated header"))?;
    let (frames, dims) = parse_header(path, &header)?;
    let len = f.metadata().map_err(|e| io(path, e))?.len() as usize;
    if len != HEADER_LEN + frames * dims * 4 {
        return Err(malformed(path, "payload length disagrees with header"));
    }
    Ok((frames, dims))
}
