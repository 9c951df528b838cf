//! The 64-bit finite-difference suite behind `pipmn gradcheck`: every graph
//! op, every stage block, and the tiny full model with its ablations.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::blocks::{
    dense_mlp, depth_block, positional_modeling, temporal_feedforward, temporal_mlp, StageParams,
};
use super::{ModelError, PipConfig, PipmnModel, Variant};
use crate::autodiff::gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ROUNDOFF_FLOOR};
use crate::autodiff::{Graph, ParamId, ParamStore, Var, LAYER_NORM_EPS};
use crate::tensor::{numel, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SuiteSize {
    #[default]
    Tiny,
    Small,
}

impl SuiteSize {
    fn dims(self) -> (usize, usize, usize) {
        match self {
            SuiteSize::Tiny => (2, 4, 5),
            SuiteSize::Small => (3, 6, 8),
        }
    }

    /// Full-model configuration checked at this size.
    pub fn config(self) -> PipConfig {
        match self {
            SuiteSize::Tiny => PipConfig {
                n: 2,
                kappas: vec![2, 3],
                time_length: 3,
                in_dim: 6,
                alpha: 2,
                ..PipConfig::base(3)
            },
            SuiteSize::Small => PipConfig {
                n: 2,
                kappas: vec![2, 4],
                time_length: 4,
                in_dim: 8,
                alpha: 3,
                ..PipConfig::base(4)
            },
        }
    }
}

impl fmt::Display for SuiteSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuiteSize::Tiny => "tiny",
            SuiteSize::Small => "small",
        })
    }
}

impl FromStr for SuiteSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tiny" => Ok(SuiteSize::Tiny),
            "small" => Ok(SuiteSize::Small),
            _ => Err(format!("unknown size `{s}` (expected tiny or small)")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let data: Vec<f64> = (0..numel(shape)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// `Σ r ⊙ y` with fixed random `r`, so every output coordinate matters.
fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(&mut rng, g.shape(y));
    let r = g.input(r)?;
    let p = g.mul(y, r)?;
    g.sum(p)
}

/// Checks one scalar function of `store`'s parameters.
pub fn run_check<F>(name: &str, store: &mut ParamStore<f64>, cfg: &GradCheckConfig, f: F) -> SuiteEntry
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    SuiteEntry {
        name: name.to_string(),
        report: grad_check(store, &ids, f, cfg),
    }
}

fn model_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => TensorError::InvalidArgument {
            op: "model",
            reason: other.to_string(),
        },
    }
}

fn op_checks(size: SuiteSize, cfg: &GradCheckConfig, out: &mut Vec<SuiteEntry>) {
    let (b, d, l) = size.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let mut reg = |name: &str, shape: &[usize]| store.register(name, random(&mut rng, shape)).unwrap();
    let x = reg("x", &[b, d, l]);
    let w = reg("w", &[l, d + 1]);
    let wb = reg("w.bias", &[d + 1]);
    let gamma = reg("gamma", &[l]);
    let beta = reg("beta", &[l]);
    let k = reg("k", &[d, 3]);
    let kb = reg("k.bias", &[d]);
    let y = reg("y", &[b, l, d]);
    let s = reg("s", &[]);

    // each check sees the whole store; unused parameters have zero
    // gradient on both sides and are skipped
    type OpFn = fn(&mut Graph<'_, f64>, [ParamId; 9]) -> Result<Var>;
    let ids = [x, w, wb, gamma, beta, k, kb, y, s];
    let ops: [(&str, OpFn); 13] = [
        ("linear", |g, p| {
            let (x, w, b) = (g.param(p[0]), g.param(p[1]), g.param(p[2]));
            g.linear(x, w, b)
        }),
        ("layer_norm", |g, p| {
            let (x, ga, be) = (g.param(p[0]), g.param(p[3]), g.param(p[4]));
            g.layer_norm(x, ga, be, LAYER_NORM_EPS)
        }),
        ("gelu", |g, p| {
            let x = g.param(p[0]);
            g.gelu(x)
        }),
        ("depthwise_conv1d", |g, p| {
            let (x, k, b) = (g.param(p[0]), g.param(p[5]), g.param(p[6]));
            g.depthwise_conv1d(x, k, b)
        }),
        ("adaptive_avg_pool_time", |g, p| {
            let x = g.param(p[0]);
            let t = g.permute_last_two(x)?;
            let out = g.shape(t)[1].div_ceil(2);
            g.adaptive_avg_pool_time(t, out)
        }),
        ("permute_last_two", |g, p| {
            let x = g.param(p[0]);
            g.permute_last_two(x)
        }),
        ("concat_last", |g, p| {
            let x = g.param(p[0]);
            let t = g.gelu(x)?;
            g.concat_last(&[x, t, x])
        }),
        ("scale_add", |g, p| {
            let (x, s) = (g.param(p[0]), g.param(p[8]));
            let y = g.param(p[7]);
            let xt = g.permute_last_two(x)?;
            g.scale_add(xt, s, y)
        }),
        ("scale", |g, p| {
            let (y, s) = (g.param(p[7]), g.param(p[8]));
            g.scale(y, s)
        }),
        ("add", |g, p| {
            let (x, y) = (g.param(p[0]), g.param(p[7]));
            let xt = g.permute_last_two(x)?;
            g.add(xt, y)
        }),
        ("mul", |g, p| {
            let (x, y) = (g.param(p[0]), g.param(p[7]));
            let xt = g.permute_last_two(x)?;
            g.mul(xt, y)
        }),
        ("mean_over_time", |g, p| {
            let y = g.param(p[7]);
            g.mean_over_time(y)
        }),
        ("sum", |g, p| {
            let x = g.param(p[0]);
            let sq = g.mul(x, x)?;
            g.sum(sq)
        }),
    ];
    for (i, (name, op)) in ops.into_iter().enumerate() {
        out.push(run_check(name, &mut store, cfg, |g| {
            let v = op(g, ids)?;
            weighted_sum(g, v, 100 + i as u64)
        }));
    }
}

fn block_checks(size: SuiteSize, cfg: &GradCheckConfig, out: &mut Vec<SuiteEntry>) {
    let config = size.config();
    let model: PipmnModel<f64> = PipmnModel::new(config.clone(), 7).expect("suite config is valid");
    let d_in = config.stage_dims()[0].d_in;
    let l = config.time_length;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = model.params.clone();
    // depth layout [B, L, D] and temporal layout [B, D, L]
    let xd = store
        .register("input.depth", random(&mut rng, &[2, l, d_in]))
        .unwrap();
    let xt = store
        .register("input.temporal", random(&mut rng, &[2, d_in, l]))
        .unwrap();
    let s: StageParams = model.stage(0).clone();

    type BlockFn = fn(&mut Graph<'_, f64>, &StageParams, Var) -> Result<Var>;
    let blocks: [(&str, bool, BlockFn); 5] = [
        ("positional_modeling", true, positional_modeling),
        ("temporal_mlp", true, temporal_mlp),
        ("temporal_feedforward", true, temporal_feedforward),
        ("depth_block", false, depth_block),
        ("dense_mlp", false, dense_mlp),
    ];
    for (i, (name, temporal, block)) in blocks.into_iter().enumerate() {
        let input = if temporal { xt } else { xd };
        out.push(run_check(name, &mut store, cfg, |g| {
            let x = g.param(input);
            let y = block(g, &s, x)?;
            weighted_sum(g, y, 200 + i as u64)
        }));
    }
}

fn model_check(name: &str, config: PipConfig, cfg: &GradCheckConfig) -> SuiteEntry {
    let model: PipmnModel<f64> = PipmnModel::new(config.clone(), 7).expect("suite config is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[2, config.time_length + 5, config.in_dim]);
    let mut store = model.params.clone();
    run_check(name, &mut store, cfg, |g| {
        let xv = g.input(x.clone())?;
        let y = model.forward(g, xv).map_err(model_err)?;
        weighted_sum(g, y, 9)
    })
}

/// Runs the whole suite at `size`. Ablated models use the randomized-input
/// roundoff floor; everything else is scored at the default threshold.
pub fn run_suite(size: SuiteSize) -> Vec<SuiteEntry> {
    let cfg = GradCheckConfig::default();
    let mut out = Vec::new();
    op_checks(size, &cfg, &mut out);
    block_checks(size, &cfg, &mut out);
    let base = size.config();
    out.push(model_check(&format!("model[{size}]"), base.clone(), &cfg));
    let floor = GradCheckConfig {
        negligible: ROUNDOFF_FLOOR,
        ..cfg
    };
    for v in [
        Variant::NoLongRangeSkip,
        Variant::NoPositional,
        Variant::NoLinearSkip,
        Variant::Oms,
    ] {
        out.push(model_check(
            &format!("model[{size}, {v}]"),
            v.config(&base),
            &floor,
        ));
    }
    out
}
