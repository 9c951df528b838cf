//! Dataset manifests, clip-level splits, the on-disk feature cache and
//! seeded batch streaming.

mod cache;
mod dataset;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::DspError;

pub use cache::{
    materialize_features, read_index, segment_file_name, CacheMeta, ExtractionFailure, IndexEntry,
    MaterializeSummary, INDEX_FILE, META_FILE,
};
pub use dataset::{Batch, Batches, Dataset, Item, Order, Source, Target, Task};
pub use synthetic::GaussianMeans;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: u64, reason: String },
    #[error("need at least {min} clips to split, manifest has {found}")]
    TooFewClips { min: usize, found: usize },
    #[error("split `{0}` has no segments")]
    EmptySplit(Split),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clip_id: String,
    pub file_path: String,
    pub labels: Vec<String>,
    pub duration_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Sorted, unique class names.
    pub vocabulary: Vec<String>,
    /// Directory relative file paths are resolved against.
    pub base_dir: PathBuf,
}

const REQUIRED_COLUMNS: [&str; 3] = ["clip_id", "file_path", "labels"];
const OPTIONAL_COLUMNS: [&str; 1] = ["duration_s"];

impl Manifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.file_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.vocabulary.binary_search_by(|v| v.as_str().cmp(label)).ok()
    }

    pub fn is_multilabel(&self) -> bool {
        self.rows.iter().any(|r| r.labels.len() > 1)
    }
}

/// Parses a `clip_id,file_path,labels[,duration_s]` CSV; labels are
/// `;`-separated.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &path.display().to_string(), base_dir)
}

pub fn parse_manifest(text: &str, origin: &str, base_dir: PathBuf) -> Result<Manifest> {
    let err = |line: u64, reason: String| DataError::Parse {
        path: origin.to_string(),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let mut col = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        if !REQUIRED_COLUMNS.contains(&h) && !OPTIONAL_COLUMNS.contains(&h) {
            return Err(err(1, format!("unknown column `{h}`")));
        }
        if col.insert(h.to_string(), i).is_some() {
            return Err(err(1, format!("duplicate column `{h}`")));
        }
    }
    for c in REQUIRED_COLUMNS {
        if !col.contains_key(c) {
            return Err(err(1, format!("missing column `{c}`")));
        }
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    let mut vocab = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |name: &str| rec.get(col[name]).unwrap_or("");
        let clip_id = field("clip_id");
        if clip_id.is_empty() {
            return Err(err(line, "empty clip_id".into()));
        }
        if !seen.insert(clip_id.to_string()) {
            return Err(err(line, format!("duplicate clip_id `{clip_id}`")));
        }
        let file_path = field("file_path");
        if file_path.is_empty() {
            return Err(err(line, "empty file_path".into()));
        }
        let mut labels = Vec::new();
        for l in field("labels").split(';').map(str::trim) {
            if l.is_empty() {
                return Err(err(line, "empty label".into()));
            }
            if !labels.iter().any(|x| x == l) {
                labels.push(l.to_string());
            }
        }
        let duration_s = match col.get("duration_s").and_then(|&i| rec.get(i)) {
            None | Some("") => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .ok()
                    .filter(|d| d.is_finite() && *d >= 0.0)
                    .ok_or_else(|| err(line, format!("bad duration_s `{v}`")))?,
            ),
        };
        vocab.extend(labels.iter().cloned());
        rows.push(ManifestRow {
            clip_id: clip_id.to_string(),
            file_path: file_path.to_string(),
            labels,
            duration_s,
        });
    }
    if vocab.len() < 2 {
        return Err(err(
            1,
            format!("need at least 2 distinct labels, found {}", vocab.len()),
        ));
    }
    Ok(Manifest {
        rows,
        vocabulary: vocab.into_iter().collect(),
        base_dir,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown split `{s}` (train, val, test)"))
    }
}

pub const MIN_CLIPS_TO_SPLIT: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, clip_id: &str) -> Option<Split> {
        self.assignment.get(clip_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|&&s| s == split).count()
    }
}

/// Seeded clip-level 80/10/10 split: val and test get `floor(n/10)` clips
/// each, train gets the rest.
pub fn make_split(m: &Manifest, seed: u64) -> Result<SplitAssignment> {
    let n = m.rows.len();
    if n < MIN_CLIPS_TO_SPLIT {
        return Err(DataError::TooFewClips {
            min: MIN_CLIPS_TO_SPLIT,
            found: n,
        });
    }
    let mut ids: Vec<&str> = m.rows.iter().map(|r| r.clip_id.as_str()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let holdout = n / 10;
    let n_train = n - 2 * holdout;
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + holdout {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), s)
        })
        .collect();
    Ok(SplitAssignment { seed, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Manifest> {
        parse_manifest(text, "m.csv", PathBuf::from("/data"))
    }

    fn manifest(n: usize) -> Manifest {
        let mut text = String::from("clip_id,file_path,labels\n");
        for i in 0..n {
            text += &format!("c{i},a/{i}.wav,{}\n", ["x", "y"][i % 2]);
        }
        parse(&text).unwrap()
    }

    #[test]
    fn parses_rows_and_vocabulary() {
        let m = parse("clip_id,file_path,labels\na,x.wav,siren\nb,/abs/y.wav,dog;siren\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows[1].labels, vec!["dog", "siren"]);
        assert_eq!(m.vocabulary, vec!["dog", "siren"]);
        assert_eq!(m.resolve(&m.rows[0]), PathBuf::from("/data/x.wav"));
        assert_eq!(m.resolve(&m.rows[1]), PathBuf::from("/abs/y.wav"));
        assert!(m.is_multilabel());
        assert_eq!(m.class_index("siren"), Some(1));
    }

    #[test]
    fn optional_duration_column() {
        let m = parse("clip_id,file_path,labels,duration_s\na,x.wav,p,4.0\nb,y.wav,q,\n").unwrap();
        assert_eq!(m.rows[0].duration_s, Some(4.0));
        assert_eq!(m.rows[1].duration_s, None);
    }

    #[test]
    fn duplicate_id_reports_its_line() {
        let e = parse("clip_id,file_path,labels\na,x.wav,p\nb,y.wav,q\na,z.wav,p\n").unwrap_err();
        match e {
            DataError::Parse { line, reason, .. } => {
                assert_eq!(line, 4);
                assert!(reason.contains("duplicate"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rejects_unknown_columns_and_empty_labels() {
        assert!(parse("clip_id,file_path,labels,extra\na,x,p,1\n").is_err());
        let e = parse("clip_id,file_path,labels\na,x.wav,p\nb,y.wav,q;\n").unwrap_err();
        assert!(matches!(e, DataError::Parse { line: 3, .. }), "{e}");
        assert!(parse("clip_id,file_path,labels\na,x.wav,p\nb,y.wav,p\n").is_err());
    }

    #[test]
    fn ten_clips_split_8_1_1() {
        let s = make_split(&manifest(10), 7).unwrap();
        assert_eq!(
            (s.count(Split::Train), s.count(Split::Val), s.count(Split::Test)),
            (8, 1, 1)
        );
    }

    #[test]
    fn split_is_seeded() {
        let m = manifest(150);
        assert_eq!(make_split(&m, 3).unwrap(), make_split(&m, 3).unwrap());
        assert_ne!(
            make_split(&m, 3).unwrap().assignment,
            make_split(&m, 4).unwrap().assignment
        );
        let s = make_split(&m, 3).unwrap();
        assert_eq!(s.count(Split::Val), 15);
        assert_eq!(s.count(Split::Train), 120);
    }

    #[test]
    fn too_few_clips() {
        assert!(matches!(
            make_split(&manifest(9), 0),
            Err(DataError::TooFewClips { found: 9, .. })
        ));
    }
}
