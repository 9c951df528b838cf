use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, DataError, Manifest, ManifestRow, Result, Split, SplitAssignment};
use crate::dsp::{
    load_wav, read_pipf_header, resample, segment_clip, write_pipf, FeatureExtractor, FeatureKind,
    PIPELINE_RATE, SEGMENT_SECONDS,
};

pub const INDEX_FILE: &str = "index.jsonl";
pub const META_FILE: &str = "meta.json";
const META_SCHEMA: u32 = 1;

/// One line of the index: a cached segment and what it belongs to.
/// `segment_path` is relative to the index's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub segment_path: String,
    pub clip_id: String,
    pub split: Split,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub schema: u32,
    pub feature_kind: FeatureKind,
    pub dims: usize,
    pub vocabulary: Vec<String>,
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractionFailure {
    pub clip_id: String,
    pub file: PathBuf,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct MaterializeSummary {
    /// `cache_dir/<feature kind>`.
    pub dir: PathBuf,
    pub entries: Vec<IndexEntry>,
    pub extracted: usize,
    pub cached: usize,
    pub failures: Vec<ExtractionFailure>,
}

impl MaterializeSummary {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// File name for segment `seg` of `clip_id`; ids with characters outside
/// `[A-Za-z0-9._-]` get a hash suffix so sanitising cannot collide.
pub fn segment_file_name(clip_id: &str, seg: usize) -> String {
    let clean: String = clip_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if clean == clip_id {
        format!("{clean}_{seg}.pipf")
    } else {
        let h = hex::encode(&Sha256::digest(clip_id.as_bytes())[..4]);
        format!("{clean}-{h}_{seg}.pipf")
    }
}

/// Reads `dir/meta.json` and `dir/index.jsonl`.
pub fn read_index(dir: impl AsRef<Path>) -> Result<(CacheMeta, Vec<IndexEntry>)> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: CacheMeta = serde_json::from_str(&meta_text).map_err(|e| DataError::Parse {
        path: meta_path.display().to_string(),
        line: e.line() as u64,
        reason: e.to_string(),
    })?;
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).map_err(|e| io_err(&index_path, e))?;
    let entries = parse_index(&text, &index_path)?;
    Ok((meta, entries))
}

fn parse_index(text: &str, path: &Path) -> Result<Vec<IndexEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DataError::Parse {
                path: path.display().to_string(),
                line: i as u64 + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

enum ClipOutcome {
    Cached(Vec<String>),
    Extracted(Vec<String>),
    Failed(ExtractionFailure),
}

fn extract_clip(
    m: &Manifest,
    row: &ManifestRow,
    ex: &FeatureExtractor,
    dir: &Path,
) -> std::result::Result<Vec<String>, String> {
    let wav = load_wav(m.resolve(row)).map_err(|e| e.to_string())?;
    let wav = resample(&wav, PIPELINE_RATE).map_err(|e| e.to_string())?;
    segment_clip(&wav, SEGMENT_SECONDS)
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let name = segment_file_name(&row.clip_id, i);
            let feats = ex.extract(seg).map_err(|e| e.to_string())?;
            write_pipf(dir.join(&name), &feats).map_err(|e| e.to_string())?;
            Ok(name)
        })
        .collect()
}

fn cached_segments(
    previous: &HashMap<String, Vec<String>>,
    clip_id: &str,
    dir: &Path,
    dims: usize,
) -> Option<Vec<String>> {
    let files = previous.get(clip_id)?;
    let complete = !files.is_empty()
        && files
            .iter()
            .all(|f| matches!(read_pipf_header(dir.join(f)), Ok((_, d)) if d == dims));
    complete.then(|| files.clone())
}

/// Extracts every clip of `m` into `cache_dir/<kind>/`, one PIPF file per
/// 4-second segment, and (re)writes the index. Clips whose segments are
/// already present are not re-extracted. Unreadable clips are recorded in
/// `failures` and left out of the index.
pub fn materialize_features(
    m: &Manifest,
    split: &SplitAssignment,
    cache_dir: impl AsRef<Path>,
    kind: FeatureKind,
) -> Result<MaterializeSummary> {
    let dir = cache_dir.as_ref().join(kind.name());
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for row in &m.rows {
        if split.get(&row.clip_id).is_none() {
            return Err(DataError::Invalid(format!(
                "clip `{}` has no split assignment",
                row.clip_id
            )));
        }
    }

    let index_path = dir.join(INDEX_FILE);
    let mut previous: HashMap<String, Vec<String>> = HashMap::new();
    if let Ok(text) = fs::read_to_string(&index_path) {
        // a damaged index only costs a re-extraction
        if let Ok(entries) = parse_index(&text, &index_path) {
            for e in entries {
                previous.entry(e.clip_id).or_default().push(e.segment_path);
            }
        }
    }

    let ex = FeatureExtractor::new(kind)?;
    let outcomes: Vec<ClipOutcome> = m
        .rows
        .par_iter()
        .map(|row| {
            if let Some(files) = cached_segments(&previous, &row.clip_id, &dir, kind.dims()) {
                return ClipOutcome::Cached(files);
            }
            match extract_clip(m, row, &ex, &dir) {
                Ok(files) => ClipOutcome::Extracted(files),
                Err(error) => ClipOutcome::Failed(ExtractionFailure {
                    clip_id: row.clip_id.clone(),
                    file: m.resolve(row),
                    error,
                }),
            }
        })
        .collect();

    let mut summary = MaterializeSummary {
        dir: dir.clone(),
        entries: Vec::new(),
        extracted: 0,
        cached: 0,
        failures: Vec::new(),
    };
    for (row, outcome) in m.rows.iter().zip(outcomes) {
        let files = match outcome {
            ClipOutcome::Cached(f) => {
                summary.cached += f.len();
                f
            }
            ClipOutcome::Extracted(f) => {
                summary.extracted += f.len();
                f
            }
            ClipOutcome::Failed(f) => {
                summary.failures.push(f);
                continue;
            }
        };
        let clip_split = split.get(&row.clip_id).expect("checked above");
        summary
            .entries
            .extend(files.into_iter().map(|segment_path| IndexEntry {
                segment_path,
                clip_id: row.clip_id.clone(),
                split: clip_split,
                labels: row.labels.clone(),
            }));
    }

    let mut index = String::new();
    for e in &summary.entries {
        index += &serde_json::to_string(e).expect("index entries serialize");
        index.push('\n');
    }
    write_atomic(&index_path, index.as_bytes())?;
    let meta = CacheMeta {
        schema: META_SCHEMA,
        feature_kind: kind,
        dims: kind.dims(),
        vocabulary: m.vocabulary.clone(),
        split_seed: split.seed,
    };
    let meta_json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    write_atomic(&dir.join(META_FILE), &meta_json)?;
    Ok(summary)
}
