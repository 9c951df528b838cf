use std::path::{Path, PathBuf};

use anyhow::anyhow;
use pipmn::data::{Dataset, Split};
use pipmn::model::{load_checkpoint, Checkpoint};
use pipmn::train::{evaluate, MetricsReport};
use serde::Serialize;

use super::{ExitCodeExt, Failure, EXIT_INVALID};
use crate::config::RunConfig;

pub const EVAL_SCHEMA: &str = "pipmn.eval/1";

#[derive(Serialize)]
struct EvalOutput<'a> {
    schema: &'static str,
    checkpoint: &'a Path,
    split: Split,
    config: &'a RunConfig,
    metrics: &'a MetricsReport,
}

/// The run config stored in a checkpoint, or the defaults for checkpoints
/// written by other tools.
pub fn stored_config(ck: &Checkpoint) -> Result<RunConfig, Failure> {
    match ck.meta.extra.get("run_config") {
        Some(v) => Ok(RunConfig::parse(&v.to_string())?),
        None => Ok(RunConfig {
            task: ck.meta.task,
            num_classes: Some(ck.meta.classes.len()),
            ..Default::default()
        }),
    }
}

pub fn run(
    checkpoint: &Path,
    split: Split,
    cache_dir: Option<PathBuf>,
    batch_size: Option<usize>,
) -> Result<(), Failure> {
    let ck = load_checkpoint(checkpoint).exit(EXIT_INVALID)?;
    let mut cfg = stored_config(&ck)?;
    if cache_dir.is_some() {
        cfg.cache_dir = cache_dir;
    }
    let dir = cfg.cache_dir()?.join(ck.meta.feature_kind.name());
    let data = Dataset::from_index(&dir, ck.meta.task).exit(EXIT_INVALID)?;
    if data.classes != ck.meta.classes {
        return Err(Failure::new(
            EXIT_INVALID,
            anyhow!(
                "cache classes {:?} differ from checkpoint classes {:?}",
                data.classes,
                ck.meta.classes
            ),
        ));
    }
    let tc = cfg.train_config();
    let report = evaluate(
        &ck.model,
        &data,
        split,
        batch_size.unwrap_or(tc.batch_size),
        tc.loss(ck.meta.task),
        tc.threshold,
    )?;
    let out = EvalOutput {
        schema: EVAL_SCHEMA,
        checkpoint,
        split,
        config: &cfg,
        metrics: &report,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("output serializes")
    );
    println!();
    print!("{}", report.table());
    Ok(())
}
