//! The PIPMN network: Dense MLP stages arranged as a paired inverse
//! pyramid, with parameter accounting, ablation variants and checkpoints.

mod blocks;
mod checkpoint;
mod config;
pub mod gradsuite;
mod variant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::tensor::{Scalar, Tensor, TensorError};

pub use blocks::{
    dense_mlp, depth_block, positional_modeling, temporal_feedforward, temporal_mlp, StageParams,
};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, PIPC_MAGIC, PIPC_VERSION,
};
pub use config::{PipConfig, StageDims, Structure};
pub use variant::{build_variant, Variant, OMS_KAPPAS};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("input has depth {found}, model expects in_dim = {expected}")]
    InputDepth { expected: usize, found: usize },
    #[error("input {shape:?}: {reason}")]
    Input { shape: Vec<usize>, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// One entry of [`PipmnModel::param_breakdown`].
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ParamGroup {
    pub group: String,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct PipmnModel<T: Scalar = f32> {
    pub config: PipConfig,
    pub params: ParamStore<T>,
    /// Per-coefficient standardization applied by [`Self::standardize`];
    /// empty means identity.
    pub feature_mean: Vec<f32>,
    pub feature_std: Vec<f32>,
    stages: Vec<StageParams>,
    rhos: Vec<ParamId>,
    head_w: ParamId,
    head_b: ParamId,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<f64> {
    let a = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..a)).collect::<Vec<_>>();
    Tensor::new(shape, data).expect("shape is consistent")
}

fn constant(shape: &[usize], v: f64) -> Tensor<f64> {
    Tensor::full(shape, v).expect("shape is consistent")
}

/// Registers every parameter of `cfg` in a fixed order, initialised from
/// `seed`.
fn init_store(cfg: &PipConfig, seed: u64) -> Result<ParamStore<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let l = cfg.time_length;
    let al = cfg.alpha * l;
    for (i, dims) in cfg.stage_dims().iter().enumerate() {
        let p = |name: &str| format!("stage{}.{name}", i + 1);
        let (din, dout) = (dims.d_in, dims.d_out);
        s.register(p("temporal.norm.gamma"), constant(&[l], 1.0))?;
        s.register(p("temporal.norm.beta"), constant(&[l], 0.0))?;
        s.register(p("temporal.fc1.w"), uniform(&mut rng, &[l, al], l))?;
        s.register(p("temporal.fc1.b"), uniform(&mut rng, &[al], l))?;
        s.register(p("temporal.fc2.w"), uniform(&mut rng, &[al, l], al))?;
        s.register(p("temporal.fc2.b"), uniform(&mut rng, &[l], al))?;
        if cfg.positional_modeling {
            s.register(p("positional.k"), uniform(&mut rng, &[din, 3], 3))?;
            s.register(p("positional.b"), uniform(&mut rng, &[din], 3))?;
        }
        s.register(p("mix.w"), uniform(&mut rng, &[3 * l, l], 3 * l))?;
        s.register(p("mix.b"), uniform(&mut rng, &[l], 3 * l))?;
        s.register(p("depth.norm.gamma"), constant(&[din], 1.0))?;
        s.register(p("depth.norm.beta"), constant(&[din], 0.0))?;
        s.register(p("depth.w"), uniform(&mut rng, &[din, dout], din))?;
        s.register(p("depth.b"), uniform(&mut rng, &[dout], din))?;
        if cfg.linear_skip {
            s.register(p("skip.w"), uniform(&mut rng, &[din, dout], din))?;
            s.register(p("skip.b"), uniform(&mut rng, &[dout], din))?;
        }
        s.register(p("eps1"), Tensor::scalar(cfg.eps1_init))?;
        s.register(p("eps2"), Tensor::scalar(cfg.eps2_init))?;
    }
    for (j, _) in cfg.skip_pairs().iter().enumerate() {
        s.register(format!("skip{}.rho", j + 1), Tensor::scalar(cfg.rho_init))?;
    }
    let d_last = cfg.output_depth();
    s.register("head.w", uniform(&mut rng, &[d_last, cfg.num_classes], d_last))?;
    s.register("head.b", uniform(&mut rng, &[cfg.num_classes], d_last))?;
    Ok(s)
}

impl<T: Scalar> PipmnModel<T> {
    /// Builds and initialises a model. Initial values are drawn in 64-bit
    /// and rounded, so `f32` and `f64` models from one seed agree.
    pub fn new(config: PipConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let store = init_store(&config, seed)?;
        Self::from_store(config, store.cast())
    }

    /// Wraps an existing parameter store, checking that it holds exactly
    /// the parameters `config` calls for.
    pub fn from_store(config: PipConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = init_store(&config, 0)?;
        if expected.len() != params.len() {
            return Err(ModelError::Config {
                field: "params",
                reason: format!(
                    "config needs {} parameter tensors, store has {}",
                    expected.len(),
                    params.len()
                ),
            });
        }
        for e in expected.iter() {
            let got = params.by_name(&e.name).ok_or_else(|| ModelError::Config {
                field: "params",
                reason: format!("missing parameter `{}`", e.name),
            })?;
            if got.tensor.shape() != e.tensor.shape() {
                return Err(ModelError::Config {
                    field: "params",
                    reason: format!(
                        "parameter `{}` has shape {:?}, config implies {:?}",
                        e.name,
                        got.tensor.shape(),
                        e.tensor.shape()
                    ),
                });
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let stages = (1..=config.stage_dims().len())
            .map(|i| StageParams::lookup(&params, i))
            .collect();
        let rhos = (1..=config.skip_pairs().len())
            .map(|j| id(&format!("skip{j}.rho")))
            .collect();
        Ok(Self {
            stages,
            rhos,
            head_w: id("head.w"),
            head_b: id("head.b"),
            config,
            params,
            feature_mean: Vec::new(),
            feature_std: Vec::new(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> PipmnModel<U> {
        PipmnModel {
            config: self.config.clone(),
            params: self.params.cast(),
            feature_mean: self.feature_mean.clone(),
            feature_std: self.feature_std.clone(),
            stages: self.stages.clone(),
            rhos: self.rhos.clone(),
            head_w: self.head_w,
            head_b: self.head_b,
        }
    }

    pub fn stage(&self, i: usize) -> &StageParams {
        &self.stages[i]
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn rho_ids(&self) -> &[ParamId] {
        &self.rhos
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Trainable scalars per stage, long-range skips and head.
    pub fn param_breakdown(&self) -> Vec<ParamGroup> {
        let mut groups: Vec<ParamGroup> = Vec::new();
        for p in self.params.iter().filter(|p| p.trainable) {
            let group = if p.name.starts_with("stage") {
                p.name.split('.').next().unwrap_or_default().to_string()
            } else if p.name.starts_with("skip") {
                "long_range_skip".to_string()
            } else {
                "head".to_string()
            };
            match groups.iter_mut().find(|g| g.group == group) {
                Some(g) => g.count += p.tensor.len(),
                None => groups.push(ParamGroup {
                    group,
                    count: p.tensor.len(),
                }),
            }
        }
        groups
    }

    pub fn set_standardization(&mut self, mean: Vec<f32>, std: Vec<f32>) -> Result<()> {
        let d = self.config.in_dim;
        if mean.len() != d || std.len() != d {
            return Err(ModelError::InputDepth {
                expected: d,
                found: mean.len().max(std.len()),
            });
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(ModelError::Config {
                field: "feature_std",
                reason: "statistics must be finite with positive std".into(),
            });
        }
        self.feature_mean = mean;
        self.feature_std = std;
        Ok(())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 {
            return Err(ModelError::Input {
                shape: shape.to_vec(),
                reason: "expected [batch, frames, in_dim]".into(),
            });
        }
        if shape[2] != self.config.in_dim {
            return Err(ModelError::InputDepth {
                expected: self.config.in_dim,
                found: shape[2],
            });
        }
        if shape[1] < self.config.time_length || shape[0] == 0 {
            return Err(ModelError::Input {
                shape: shape.to_vec(),
                reason: format!(
                    "need a non-empty batch and at least time_length = {} frames",
                    self.config.time_length
                ),
            });
        }
        Ok(())
    }

    /// `(x − mean) / std` over the last axis, converted to `T`.
    pub fn standardize(&self, x: &Tensor<f32>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        if self.feature_mean.is_empty() {
            return Ok(x.cast());
        }
        let d = self.config.in_dim;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| T::of(((v - self.feature_mean[i % d]) / self.feature_std[i % d]) as f64))
            .collect();
        Ok(Tensor::new(x.shape(), data)?)
    }

    /// Logits `[B, num_classes]` for standardized input `x: [B, T, in_dim]`.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let mut h = g.adaptive_avg_pool_time(x, self.config.time_length)?;
        let pairs = self.config.skip_pairs();
        let mut outs: Vec<Var> = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            h = dense_mlp(g, stage, h)?;
            if let Some(j) = pairs.iter().position(|&(_, later)| later == i) {
                let rho = g.param(self.rhos[j]);
                h = g.scale_add(outs[pairs[j].0], rho, h)?;
            }
            outs.push(h);
        }
        let pooled = g.mean_over_time(h)?;
        let (w, b) = (g.param(self.head_w), g.param(self.head_b));
        Ok(g.linear(pooled, w, b)?)
    }

    /// Standardizes raw features and runs [`Self::forward`] without
    /// keeping the graph.
    pub fn logits(&self, raw: &Tensor<f32>) -> Result<Tensor<T>> {
        let x = self.standardize(raw)?;
        let mut g = Graph::new(&self.params);
        let xv = g.input(x)?;
        let y = self.forward(&mut g, xv)?;
        Ok(g.tensor(y))
    }
}

#[cfg(test)]
mod tests;
