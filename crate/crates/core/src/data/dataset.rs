use std::borrow::Cow;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{read_index, DataError, Result, Split};
use crate::dsp::{read_pipf, FeatureMatrix};
use crate::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Multiclass,
    Multilabel,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Multiclass => "multiclass",
            Task::Multilabel => "multilabel",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "multiclass" => Ok(Task::Multiclass),
            "multilabel" => Ok(Task::Multilabel),
            _ => Err(format!("unknown task `{s}` (multiclass, multilabel)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    /// Sorted, unique class indices; may be empty.
    Labels(Vec<usize>),
}

#[derive(Clone, Debug)]
pub enum Source {
    Memory(Arc<FeatureMatrix>),
    Cache(PathBuf),
}

impl Source {
    pub fn load(&self) -> Result<Cow<'_, FeatureMatrix>> {
        match self {
            Source::Memory(m) => Ok(Cow::Borrowed(m)),
            Source::Cache(p) => Ok(Cow::Owned(read_pipf(p)?)),
        }
    }
}

/// One segment.
#[derive(Clone, Debug)]
pub struct Item {
    pub clip_id: String,
    pub split: Split,
    pub target: Target,
    pub source: Source,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Sequential,
    /// A fresh permutation per `(seed, epoch)`.
    Shuffled {
        seed: u64,
        epoch: u64,
    },
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub task: Task,
    pub classes: Vec<String>,
    pub items: Vec<Item>,
}

impl Dataset {
    pub fn new(task: Task, classes: Vec<String>, items: Vec<Item>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(DataError::Invalid("need at least two classes".into()));
        }
        for it in &items {
            let ok = match (&it.target, task) {
                (Target::Class(c), Task::Multiclass) => *c < classes.len(),
                (Target::Labels(ls), Task::Multilabel) => ls.iter().all(|&c| c < classes.len()),
                _ => false,
            };
            if !ok {
                return Err(DataError::Invalid(format!(
                    "segment of clip `{}` has a target inconsistent with a {task:?} task over {} classes",
                    it.clip_id,
                    classes.len()
                )));
            }
        }
        Ok(Self { task, classes, items })
    }

    /// Loads a materialized cache directory (`cache_dir/<kind>`).
    pub fn from_index(dir: impl AsRef<Path>, task: Task) -> Result<Self> {
        let dir = dir.as_ref();
        let (meta, entries) = read_index(dir)?;
        let classes = meta.vocabulary;
        let mut items = Vec::with_capacity(entries.len());
        for e in entries {
            let mut idx = Vec::with_capacity(e.labels.len());
            for l in &e.labels {
                let i = classes.binary_search(l).map_err(|_| {
                    DataError::Invalid(format!("label `{l}` of clip `{}` not in vocabulary", e.clip_id))
                })?;
                idx.push(i);
            }
            idx.sort_unstable();
            idx.dedup();
            let target = match task {
                Task::Multiclass if idx.len() == 1 => Target::Class(idx[0]),
                Task::Multiclass => {
                    return Err(DataError::Invalid(format!(
                        "clip `{}` has {} labels; multiclass needs exactly one",
                        e.clip_id,
                        idx.len()
                    )))
                }
                Task::Multilabel => Target::Labels(idx),
            };
            items.push(Item {
                clip_id: e.clip_id,
                split: e.split,
                target,
                source: Source::Cache(dir.join(&e.segment_path)),
            });
        }
        Self::new(task, classes, items)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| self.items[i].split == split)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.items.iter().filter(|it| it.split == split).count()
    }

    /// Per-dimension mean and standard deviation over every frame of
    /// `split`; near-constant dimensions get std 1.
    pub fn feature_stats(&self, split: Split) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for i in self.indices(split) {
            let m = self.items[i].source.load()?;
            if sum.is_empty() {
                sum = vec![0.0; m.dims];
                sq = vec![0.0; m.dims];
            } else if m.dims != sum.len() {
                return Err(DataError::Invalid(format!(
                    "segment of clip `{}` has {} dims, expected {}",
                    self.items[i].clip_id,
                    m.dims,
                    sum.len()
                )));
            }
            for f in 0..m.frames {
                for (j, &v) in m.row(f).iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += v as f64 * v as f64;
                }
            }
            n += m.frames;
        }
        if n == 0 {
            return Err(DataError::EmptySplit(split));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, mu)| {
                let sd = (s / n as f64 - mu * mu).max(0.0).sqrt();
                if sd < 1e-8 {
                    1.0
                } else {
                    sd as f32
                }
            })
            .collect();
        Ok((mean.into_iter().map(|m| m as f32).collect(), std))
    }

    /// Loads the given items as one `[B, T, D]` batch.
    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        if idx.is_empty() {
            return Err(DataError::Invalid("empty batch".into()));
        }
        let mut data = Vec::new();
        let mut shape = None;
        for &i in idx {
            let it = self
                .items
                .get(i)
                .ok_or_else(|| DataError::Invalid(format!("item {i} out of range")))?;
            let m = it.source.load()?;
            match shape {
                None => shape = Some((m.frames, m.dims)),
                Some(s) if s != (m.frames, m.dims) => {
                    return Err(DataError::Invalid(format!(
                        "segment of clip `{}` is {}x{}, batch expects {}x{}",
                        it.clip_id, m.frames, m.dims, s.0, s.1
                    )))
                }
                _ => {}
            }
            data.extend_from_slice(&m.data);
        }
        let (t, d) = shape.expect("non-empty batch");
        let features =
            Tensor::new(&[idx.len(), t, d], data).map_err(|e| DataError::Invalid(e.to_string()))?;
        Ok(Batch {
            features,
            targets: idx.iter().map(|&i| self.items[i].target.clone()).collect(),
            items: idx.to_vec(),
        })
    }

    pub fn batches(&self, split: Split, batch_size: usize, order: Order) -> Result<Batches<'_>> {
        if batch_size == 0 {
            return Err(DataError::Invalid("batch size must be positive".into()));
        }
        let mut idx = self.indices(split);
        if idx.is_empty() {
            return Err(DataError::EmptySplit(split));
        }
        if let Order::Shuffled { seed, epoch } = order {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch);
            idx.shuffle(&mut rng);
        }
        Ok(Batches {
            data: self,
            order: idx,
            pos: 0,
            batch_size,
        })
    }
}

/// Raw (unstandardized) features `[B, T, D]` with their targets.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Tensor<f32>,
    pub targets: Vec<Target>,
    pub items: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn class_indices(&self) -> Result<Vec<usize>> {
        self.targets
            .iter()
            .map(|t| match t {
                Target::Class(c) => Ok(*c),
                Target::Labels(_) => Err(DataError::Invalid("expected single-label targets".into())),
            })
            .collect()
    }

    /// `B × classes` 0/1 matrix.
    pub fn multi_hot(&self, classes: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * classes];
        for (b, t) in self.targets.iter().enumerate() {
            match t {
                Target::Class(c) => out[b * classes + c] = 1.0,
                Target::Labels(ls) => ls.iter().for_each(|&c| out[b * classes + c] = 1.0),
            }
        }
        out
    }
}

pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.data.batch(&idx))
    }
}
