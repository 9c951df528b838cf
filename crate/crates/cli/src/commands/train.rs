use std::fs;
use std::path::Path;

use anyhow::Context;
use log::{debug, info};
use pipmn::data::{Dataset, Split};
use pipmn::model::{save_checkpoint, CheckpointMeta, PipmnModel};
use pipmn::train::{evaluate, train, MetricsReport, StopReason};
use serde::Serialize;

use super::{
    open_dataset, write_json, ExitCodeExt, Failure, CHECKPOINT_FILE, CONFIG_FILE, EXIT_INVALID, REPORT_FILE,
    RUNLOG_FILE, TRAIN_REPORT_SCHEMA,
};
use crate::config::{Overrides, RunConfig};

#[derive(Serialize)]
pub struct TrainReport {
    pub schema: &'static str,
    pub config: RunConfig,
    pub param_count: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub wall_clock_s: f64,
    /// Metrics of the kept model on each non-empty split.
    pub train: MetricsReport,
    pub val: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
}

/// Trains one model from `cfg` on `data` and writes checkpoint, run log,
/// report and effective config into `out`.
pub fn fit(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<TrainReport, Failure> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .exit(EXIT_INVALID)?;
    let arch = cfg.model_config(data.num_classes());
    let mut model: PipmnModel<f32> = PipmnModel::new(arch, cfg.seed).exit(EXIT_INVALID)?;
    let tc = cfg.train_config();
    info!(
        "training {} ({} parameters) on {} train / {} val segments",
        cfg.variant,
        model.param_count(),
        data.count(Split::Train),
        data.count(Split::Val)
    );
    let outcome = train(&mut model, data, &tc, |e| {
        let line = format!(
            "epoch {:>5}  loss {:.5}  acc {:.4}{}",
            e.epoch,
            e.train_loss,
            e.train_acc,
            match (e.val_loss, e.val_acc) {
                (Some(l), Some(a)) => format!("  val_loss {l:.5}  val_acc {a:.4}"),
                _ => String::new(),
            }
        );
        if e.epoch == 1 || e.epoch % 10 == 0 {
            info!("{line}");
        } else {
            debug!("{line}");
        }
    })?;
    info!(
        "stopped after {} epochs ({:?}); keeping epoch {}",
        outcome.log.epochs.len(),
        outcome.log.stop_reason,
        outcome.best_epoch
    );

    let best = &outcome.best;
    let loss = tc.loss(data.task);
    let score = |split: Split| -> Result<Option<MetricsReport>, Failure> {
        if data.count(split) == 0 {
            return Ok(None);
        }
        Ok(Some(evaluate(
            best,
            data,
            split,
            tc.batch_size,
            loss,
            tc.threshold,
        )?))
    };
    let report = TrainReport {
        schema: TRAIN_REPORT_SCHEMA,
        config: cfg.clone(),
        param_count: best.param_count(),
        epochs_run: outcome.log.epochs.len(),
        best_epoch: outcome.best_epoch,
        stop_reason: outcome.log.stop_reason,
        wall_clock_s: outcome.log.wall_clock_s,
        train: score(Split::Train)?.expect("train split is non-empty"),
        val: score(Split::Val)?,
        test: score(Split::Test)?,
    };

    let mut extra = serde_json::Map::new();
    extra.insert("run_config".into(), cfg.to_json());
    extra.insert("best_epoch".into(), outcome.best_epoch.into());
    if let Some(v) = &report.val {
        extra.insert(
            "val_report".into(),
            serde_json::to_value(v).expect("report serializes"),
        );
    }
    let meta = CheckpointMeta {
        feature_kind: cfg.feature_kind(),
        task: data.task,
        classes: data.classes.clone(),
        extra,
    };
    save_checkpoint(out.join(CHECKPOINT_FILE), best, &meta).exit(EXIT_INVALID)?;
    outcome.log.write_jsonl(out.join(RUNLOG_FILE))?;
    write_json(&out.join(REPORT_FILE), &report).exit(EXIT_INVALID)?;
    write_json(&out.join(CONFIG_FILE), cfg).exit(EXIT_INVALID)?;
    Ok(report)
}

pub fn run(config: Option<&Path>, out: &Path, o: &Overrides) -> Result<(), Failure> {
    let mut cfg = RunConfig::resolve(config, o)?;
    let data = open_dataset(&mut cfg)?;
    let report = fit(&cfg, &data, out)?;
    let (name, shown) = match &report.val {
        Some(v) => ("val", v),
        None => ("train", &report.train),
    };
    println!("{name} metrics of the kept model (epoch {}):", report.best_epoch);
    print!("{}", shown.table());
    println!("wrote {}", out.display());
    Ok(())
}
