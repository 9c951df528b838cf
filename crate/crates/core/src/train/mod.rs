//! AdamW, losses, metrics, the training loop with its stop rule, and
//! evaluation.

mod loss;
mod metrics;
mod optim;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Graph;
use crate::data::{DataError, Dataset, Order, Split, Target, Task};
use crate::model::{ModelError, PipmnModel};
use crate::tensor::TensorError;

pub use loss::{bce_multilabel, cross_entropy_smoothed, label_smoothing_floor, sigmoid, Loss, LossGrad};
pub use metrics::{multiclass_metrics, multilabel_metrics, ClassRow, MetricsReport, METRICS_SCHEMA};
pub use optim::{AdamW, AdamWConfig};

pub const RUNLOG_SCHEMA: &str = "pipmn.runlog/1";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged in epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("trainable parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("nothing to evaluate: the split is empty")]
    EmptyEvaluation,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(TensorError),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { op } => TrainError::Diverged {
                epoch: 0,
                detail: format!("non-finite value produced by {op}"),
            },
            other => TrainError::Tensor(other),
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => t.into(),
            other => TrainError::Model(other),
        }
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

fn at_epoch(e: TrainError, epoch: usize) -> TrainError {
    match e {
        TrainError::Diverged { detail, .. } => TrainError::Diverged { epoch, detail },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub label_smoothing: f64,
    /// Epochs without a train-loss improvement of more than `min_delta`
    /// before stopping (only once train accuracy is 100%).
    pub patience: usize,
    pub min_delta: f64,
    /// Sigmoid threshold for multilabel predictions.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3500,
            batch_size: 128,
            seed: 0,
            optimizer: AdamWConfig::default(),
            label_smoothing: 0.1,
            patience: 20,
            min_delta: 1e-4,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self, task: Task) -> Loss {
        match task {
            Task::Multiclass => Loss::SmoothedCrossEntropy {
                eps: self.label_smoothing,
            },
            Task::Multilabel => Loss::Bce,
        }
    }
}

/// Patience-based realisation of "train accuracy is 100% and the loss has
/// stopped decreasing".
#[derive(Clone, Debug)]
pub struct StopRule {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    stall: usize,
}

impl StopRule {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            stall: 0,
        }
    }

    /// Records one epoch; returns true when training should stop.
    pub fn update(&mut self, train_loss: f64, train_acc: f64) -> bool {
        if train_loss < self.best - self.min_delta {
            self.best = train_loss;
            self.stall = 0;
        } else {
            self.stall += 1;
        }
        train_acc >= 1.0 && self.stall >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochLimit,
    StopRule,
}

#[derive(Serialize, Deserialize)]
struct RunLogHeader {
    schema: String,
    seed: u64,
    config_hash: String,
}

/// Per-epoch history. The JSONL form holds a header line and one line per
/// epoch; wall-clock time is kept out of it so identical runs produce
/// identical files.
#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub seed: u64,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub wall_clock_s: f64,
}

impl RunLog {
    pub fn to_jsonl(&self) -> String {
        let header = RunLogHeader {
            schema: RUNLOG_SCHEMA.into(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.epochs {
            out += &serde_json::to_string(e).expect("epoch serializes");
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// Parses the JSONL form (wall clock and stop reason are not stored
    /// there and come back as 0 / epoch limit).
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |e: serde_json::Error| TrainError::Invalid(format!("run log: {e}"));
        let header: RunLogHeader = serde_json::from_str(lines.next().unwrap_or("")).map_err(bad)?;
        if header.schema != RUNLOG_SCHEMA {
            return Err(TrainError::Invalid(format!(
                "unknown run log schema {}",
                header.schema
            )));
        }
        let epochs = lines
            .map(|l| serde_json::from_str(l).map_err(bad))
            .collect::<Result<Vec<EpochRecord>>>()?;
        if epochs.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
            return Err(TrainError::Invalid("run log epochs are not increasing".into()));
        }
        Ok(Self {
            seed: header.seed,
            config_hash: header.config_hash,
            epochs,
            stop_reason: StopReason::EpochLimit,
            wall_clock_s: 0.0,
        })
    }
}

/// SHA-256 of the JSON form of `value`.
pub fn config_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

pub struct TrainOutcome {
    pub log: RunLog,
    /// Parameters from the epoch with the best validation headline metric
    /// (the final ones when there is no validation split).
    pub best: PipmnModel<f32>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    /// Validation report of `best`.
    pub val_report: Option<MetricsReport>,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn label_set(t: &Target) -> &[usize] {
    match t {
        Target::Class(c) => std::slice::from_ref(c),
        Target::Labels(ls) => ls,
    }
}

/// Per-example score used for train accuracy: exact class match, or the
/// Jaccard overlap of label sets.
fn example_score(task: Task, row: &[f32], target: &Target, threshold: f64) -> f64 {
    match task {
        Task::Multiclass => (label_set(target) == [argmax(row)]) as u8 as f64,
        Task::Multilabel => {
            let truth = label_set(target);
            let pred: Vec<usize> = (0..row.len())
                .filter(|&k| sigmoid(row[k] as f64) >= threshold)
                .collect();
            let inter = pred.iter().filter(|k| truth.contains(k)).count();
            let union = pred.len() + truth.len() - inter;
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        }
    }
}

/// Class probabilities (softmax or per-label sigmoid) for raw features.
pub fn probabilities(model: &PipmnModel<f32>, task: Task, raw: &crate::Tensor<f32>) -> Result<Vec<Vec<f64>>> {
    let logits = model.logits(raw)?;
    let c = model.config.num_classes;
    Ok(logits
        .data()
        .chunks(c)
        .map(|row| {
            let z: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            match task {
                Task::Multiclass => {
                    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.into_iter().map(|v| v / s).collect()
                }
                Task::Multilabel => z.into_iter().map(sigmoid).collect(),
            }
        })
        .collect())
}

/// Scores every segment of `split`. Batches are evaluated in parallel and
/// merged in order, so the result does not depend on the thread count.
pub fn evaluate(
    model: &PipmnModel<f32>,
    data: &Dataset,
    split: Split,
    batch_size: usize,
    loss: Loss,
    threshold: f64,
) -> Result<MetricsReport> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(TrainError::EmptyEvaluation);
    }
    let c = model.config.num_classes;
    if c != data.num_classes() {
        return Err(TrainError::Invalid(format!(
            "model has {c} classes, data has {}",
            data.num_classes()
        )));
    }
    let chunks: Vec<&[usize]> = idx.chunks(batch_size.max(1)).collect();
    let parts = chunks
        .par_iter()
        .map(|chunk| -> Result<(Vec<f32>, Vec<Target>, f64)> {
            let batch = data.batch(chunk)?;
            let logits = model.logits(&batch.features)?;
            let z: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
            let (l, _) = loss.evaluate(&z, c, &batch.targets)?;
            Ok((logits.into_data(), batch.targets, l * chunk.len() as f64))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = idx.len();
    let mut total_loss = 0.0;
    let mut all_logits = Vec::with_capacity(n * c);
    let mut targets = Vec::with_capacity(n);
    for (l, t, s) in parts {
        all_logits.extend(l);
        targets.extend(t);
        total_loss += s;
    }
    let mut report = match data.task {
        Task::Multiclass => {
            let truth: Vec<usize> = targets.iter().map(|t| label_set(t)[0]).collect();
            let pred: Vec<usize> = all_logits.chunks(c).map(argmax).collect();
            multiclass_metrics(&truth, &pred, &data.classes)?
        }
        Task::Multilabel => {
            let mut truth = vec![false; n * c];
            for (i, t) in targets.iter().enumerate() {
                label_set(t).iter().for_each(|&k| truth[i * c + k] = true);
            }
            let pred: Vec<bool> = all_logits
                .iter()
                .map(|&z| sigmoid(z as f64) >= threshold)
                .collect();
            multilabel_metrics(&truth, &pred, &data.classes)?
        }
    };
    report.loss = Some(total_loss / n as f64);
    Ok(report)
}

/// Runs the training loop. Standardization statistics are computed from
/// the train split unless the model already carries them. `on_epoch` is
/// called after every epoch.
pub fn train(
    model: &mut PipmnModel<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let started = Instant::now();
    if cfg.batch_size == 0 {
        return Err(TrainError::Invalid("batch_size must be positive".into()));
    }
    if model.config.num_classes != data.num_classes() {
        return Err(TrainError::Invalid(format!(
            "model has {} classes, data has {}",
            model.config.num_classes,
            data.num_classes()
        )));
    }
    if data.count(Split::Train) == 0 {
        return Err(DataError::EmptySplit(Split::Train).into());
    }
    if model.feature_mean.is_empty() {
        let (mean, std) = data.feature_stats(Split::Train)?;
        model.set_standardization(mean, std)?;
    }
    let loss_fn = cfg.loss(data.task);
    let floor = match loss_fn {
        Loss::SmoothedCrossEntropy { eps } => label_smoothing_floor(data.num_classes(), eps),
        Loss::Bce => 0.0,
    };
    let has_val = data.count(Split::Val) > 0;
    let c = model.config.num_classes;

    let mut opt = AdamW::new(cfg.optimizer, &model.params);
    let mut rule = StopRule::new(cfg.patience, cfg.min_delta);
    let mut log = RunLog {
        seed: cfg.seed,
        config_hash: config_hash(&(&model.config, cfg)),
        epochs: Vec::new(),
        stop_reason: StopReason::EpochLimit,
        wall_clock_s: 0.0,
    };
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut val_report = None;

    for epoch in 1..=cfg.epochs {
        let order = Order::Shuffled {
            seed: cfg.seed,
            epoch: epoch as u64,
        };
        let (mut loss_sum, mut score_sum, mut seen) = (0.0, 0.0, 0usize);
        for batch in data.batches(Split::Train, cfg.batch_size, order)? {
            let batch = batch?;
            let x = model.standardize(&batch.features)?;
            let (value, logits, grads) = {
                let mut g = Graph::new(&model.params);
                let step = (|| -> Result<_> {
                    let xv = g.input(x)?;
                    let y = model.forward(&mut g, xv)?;
                    let (node, value) = loss_fn.attach(&mut g, y, &batch.targets)?;
                    let logits = g.data(y).to_vec();
                    Ok((value, logits, g.backward(node)?))
                })();
                step.map_err(|e| at_epoch(e, epoch))?
            };
            model.params.accumulate(&grads)?;
            opt.step(&mut model.params)?;
            loss_sum += value * batch.len() as f64;
            score_sum += logits
                .chunks(c)
                .zip(&batch.targets)
                .map(|(row, t)| example_score(data.task, row, t, cfg.threshold))
                .sum::<f64>();
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;
        let train_acc = score_sum / seen as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                detail: format!("train loss {train_loss}"),
            });
        }
        assert!(
            train_loss >= floor - 1e-9,
            "train loss {train_loss} below the label-smoothing floor {floor}"
        );

        let mut record = EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss: None,
            val_acc: None,
        };
        if has_val {
            let r = evaluate(model, data, Split::Val, cfg.batch_size, loss_fn, cfg.threshold)
                .map_err(|e| at_epoch(e, epoch))?;
            record.val_loss = r.loss;
            record.val_acc = Some(r.headline());
            if r.headline() > best_score {
                best_score = r.headline();
                best = model.clone();
                best_epoch = epoch;
                val_report = Some(r);
            }
        }
        on_epoch(&record);
        log.epochs.push(record);
        if rule.update(train_loss, train_acc) {
            log.stop_reason = StopReason::StopRule;
            break;
        }
    }
    if !has_val {
        best = model.clone();
        best_epoch = log.epochs.len();
    } else if best_epoch == 0 {
        // zero epochs: report the initial model
        val_report = Some(evaluate(
            model,
            data,
            Split::Val,
            cfg.batch_size,
            loss_fn,
            cfg.threshold,
        )?);
    }
    log.wall_clock_s = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        log,
        best,
        best_epoch,
        val_report,
    })
}
