//! The flat JSON run configuration shared by every subcommand.

use std::fmt;
use std::path::{Path, PathBuf};

use pipmn::data::Task;
use pipmn::dsp::FeatureKind;
use pipmn::model::{ModelError, PipConfig, Structure, Variant};
use pipmn::train::{AdamWConfig, TrainConfig};
use serde::{Deserialize, Serialize};

pub const CACHE_ENV: &str = "PIPMN_CACHE_DIR";

/// Problem with a configuration value, always tied to a field name.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    pub task: Task,
    pub variant: Variant,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub label_smoothing: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub threshold: f64,

    pub n: usize,
    pub kappas: Vec<usize>,
    pub time_length: usize,
    /// Defaults to the width of the variant's input features.
    pub in_dim: Option<usize>,
    pub alpha: usize,
    /// Defaults to the vocabulary size of the data (10 for `params`).
    pub num_classes: Option<usize>,
    pub long_range_skip: bool,
    pub positional_modeling: bool,
    pub linear_skip: bool,
    pub structure: Structure,
    pub eps1_init: f64,
    pub eps2_init: f64,
    pub rho_init: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = PipConfig::base(10);
        let tc = TrainConfig::default();
        Self {
            manifest: None,
            cache_dir: None,
            seed: 0,
            task: Task::Multiclass,
            variant: Variant::Base,
            epochs: tc.epochs,
            batch_size: tc.batch_size,
            lr: tc.optimizer.lr,
            weight_decay: tc.optimizer.weight_decay,
            beta1: tc.optimizer.beta1,
            beta2: tc.optimizer.beta2,
            adam_eps: tc.optimizer.eps,
            label_smoothing: tc.label_smoothing,
            patience: tc.patience,
            min_delta: tc.min_delta,
            threshold: tc.threshold,
            n: arch.n,
            kappas: arch.kappas,
            time_length: arch.time_length,
            in_dim: None,
            alpha: arch.alpha,
            num_classes: None,
            long_range_skip: arch.long_range_skip,
            positional_modeling: arch.positional_modeling,
            linear_skip: arch.linear_skip,
            structure: arch.structure,
            eps1_init: arch.eps1_init,
            eps2_init: arch.eps2_init,
            rho_init: arch.rho_init,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Seed for splits, initialization and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// multiclass or multilabel.
    #[arg(long)]
    pub task: Option<Task>,
    /// Ablation variant (base, no_long_range_skip, no_positional,
    /// no_linear_skip, oms, mfcc50, mel100).
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Feature cache directory (default: config, then $PIPMN_CACHE_DIR).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a config file; errors name the offending field.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.to_string();
            // unknown keys are reported by serde against the parent path
            let field = match msg.split('`').nth(1) {
                Some(name) if msg.starts_with("unknown field") => name.to_string(),
                _ if path == "." => "<root>".to_string(),
                _ => path,
            };
            bad(&field, msg)
        })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Ok(Self::parse(&text)?)
    }

    /// File (or defaults) plus overrides, validated.
    pub fn resolve(path: Option<&Path>, o: &Overrides) -> anyhow::Result<Self> {
        let mut c = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.apply(o);
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = o.batch_size {
            self.batch_size = v;
        }
        if let Some(v) = o.lr {
            self.lr = v;
        }
        if let Some(v) = o.task {
            self.task = v;
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(v) = o.num_classes {
            self.num_classes = Some(v);
        }
        if let Some(v) = &o.cache_dir {
            self.cache_dir = Some(v.clone());
        }
        if let Some(v) = &o.manifest {
            self.manifest = Some(v.clone());
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(bad(field, format!("must be a positive number, got {v}")))
            }
        };
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1"));
        }
        positive("lr", self.lr)?;
        positive("adam_eps", self.adam_eps)?;
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(bad("weight_decay", "must be non-negative"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(bad(field, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(bad("label_smoothing", "must lie in [0, 1)"));
        }
        if self.patience == 0 {
            return Err(bad("patience", "must be at least 1"));
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return Err(bad("min_delta", "must be non-negative"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(bad("threshold", "must lie in (0, 1)"));
        }
        let kind = self.variant.feature_kind();
        if let Some(d) = self.in_dim {
            if kind != FeatureKind::Stack && d != kind.dims() {
                return Err(bad(
                    "in_dim",
                    format!(
                        "variant {} reads {}-wide features, got {d}",
                        self.variant,
                        kind.dims()
                    ),
                ));
            }
        }
        self.model_config(self.num_classes.unwrap_or(10))
            .validate()
            .map_err(|e| match e {
                ModelError::Config { field, reason } => bad(field, reason),
                other => bad("<model>", other.to_string()),
            })
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.variant.feature_kind()
    }

    /// Architecture of the selected variant.
    pub fn model_config(&self, num_classes: usize) -> PipConfig {
        let base = PipConfig {
            n: self.n,
            kappas: self.kappas.clone(),
            time_length: self.time_length,
            in_dim: self.in_dim.unwrap_or(FeatureKind::Stack.dims()),
            alpha: self.alpha,
            num_classes,
            long_range_skip: self.long_range_skip,
            positional_modeling: self.positional_modeling,
            linear_skip: self.linear_skip,
            structure: self.structure,
            eps1_init: self.eps1_init,
            eps2_init: self.eps2_init,
            rho_init: self.rho_init,
        };
        self.variant.config(&base)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: AdamWConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            label_smoothing: self.label_smoothing,
            patience: self.patience,
            min_delta: self.min_delta,
            threshold: self.threshold,
        }
    }

    /// Flag, then config file, then `$PIPMN_CACHE_DIR`.
    pub fn cache_dir(&self) -> Result<PathBuf, ConfigError> {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                bad(
                    "cache_dir",
                    format!("not set; pass --cache-dir or set {CACHE_ENV}"),
                )
            })
    }

    /// Checks the class count against the data and fixes it if unset.
    pub fn bind_classes(&mut self, found: usize) -> Result<usize, ConfigError> {
        match self.num_classes {
            Some(c) if c != found => Err(bad(
                "num_classes",
                format!("config says {c} but the data has {found} classes"),
            )),
            _ => {
                self.num_classes = Some(found);
                Ok(found)
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(RunConfig::parse("{}").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trip_is_identity() {
        let c = RunConfig {
            seed: 42,
            variant: Variant::Mfcc50,
            cache_dir: Some("/tmp/x".into()),
            num_classes: Some(4),
            ..Default::default()
        };
        let back = RunConfig::parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let e = RunConfig::parse(r#"{"epochs": 3, "learning_rate": 0.1}"#).unwrap_err();
        assert_eq!(e.field, "learning_rate");
    }

    #[test]
    fn type_error_names_the_key() {
        let e = RunConfig::parse(r#"{"lr": "fast"}"#).unwrap_err();
        assert_eq!(e.field, "lr");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let cases = [
            (r#"{"batch_size": 0}"#, "batch_size"),
            (r#"{"lr": -1}"#, "lr"),
            (r#"{"beta2": 1.0}"#, "beta2"),
            (r#"{"kappas": [4]}"#, "kappas"),
            (r#"{"variant": "mfcc50", "in_dim": 100}"#, "in_dim"),
            (r#"{"structure": "oms"}"#, "long_range_skip"),
        ];
        for (text, field) in cases {
            let e = RunConfig::parse(text).unwrap().validate().unwrap_err();
            assert_eq!(e.field, field, "{text}: {e}");
        }
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::parse(r#"{"seed": 1, "epochs": 10}"#).unwrap();
        c.apply(&Overrides {
            seed: Some(2),
            ..Default::default()
        });
        assert_eq!((c.seed, c.epochs), (2, 10));
    }

    #[test]
    fn variant_configs() {
        let c = RunConfig {
            variant: Variant::Mfcc50,
            ..Default::default()
        };
        assert_eq!(c.model_config(10).in_dim, 50);
        let c = RunConfig {
            variant: Variant::Mel100,
            ..Default::default()
        };
        assert_eq!(c.model_config(10), RunConfig::default().model_config(10));
    }

    #[test]
    fn class_binding() {
        let mut c = RunConfig::default();
        assert_eq!(c.bind_classes(4).unwrap(), 4);
        assert_eq!(c.num_classes, Some(4));
        assert_eq!(c.bind_classes(5).unwrap_err().field, "num_classes");
    }
}
