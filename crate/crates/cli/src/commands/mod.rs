pub mod ablate;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod params;
pub mod predict;
pub mod train;

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use pipmn::data::Dataset;
use pipmn::train::TrainError;
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};

/// Bad configuration, usage or input; also any unclassified failure.
pub const EXIT_INVALID: u8 = 1;
/// Unreadable audio or a failed extraction / ablation variant.
pub const EXIT_DATA: u8 = 2;
/// Training produced a non-finite value.
pub const EXIT_DIVERGED: u8 = 3;

pub const TRAIN_REPORT_SCHEMA: &str = "pipmn.train-report/1";
pub const CHECKPOINT_FILE: &str = "checkpoint.pipc";
pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

/// Everything not classified explicitly exits with 1; divergence maps to 3.
impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<TrainError>() {
            Some(TrainError::Diverged { .. }) => EXIT_DIVERGED,
            _ => EXIT_INVALID,
        };
        Self { code, error }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_INVALID, e)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        anyhow::Error::from(e).into()
    }
}

pub trait ExitCodeExt<T> {
    fn exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitCodeExt<T> for Result<T, E> {
    fn exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(code, e))
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Opens `cache_dir/<kind>` for the config's task and variant. A width
/// mismatch between cache and model is reported against `in_dim`.
pub fn open_dataset(cfg: &mut RunConfig) -> Result<Dataset, Failure> {
    let dir = cfg.cache_dir()?.join(cfg.feature_kind().name());
    if !dir.join(pipmn::data::INDEX_FILE).exists() {
        return Err(Failure::new(
            EXIT_INVALID,
            anyhow!(
                "no feature cache at {}; run `pipmn features` first",
                dir.display()
            ),
        ));
    }
    let data = Dataset::from_index(&dir, cfg.task).exit(EXIT_INVALID)?;
    cfg.bind_classes(data.num_classes())?;
    let want = cfg.model_config(data.num_classes()).in_dim;
    let (meta, _) = pipmn::data::read_index(&dir).exit(EXIT_INVALID)?;
    if meta.dims != want {
        return Err(ConfigError {
            field: "in_dim".into(),
            reason: format!(
                "model expects {want} features per frame, cache holds {}",
                meta.dims
            ),
        }
        .into());
    }
    Ok(data)
}
