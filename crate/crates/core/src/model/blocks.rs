//! Building blocks of one Dense MLP stage.
//!
//! Temporal layout is `[B, D, L]` (mixing along time), depth layout is
//! `[B, L, D]` (mixing along coefficients).

use crate::autodiff::{Graph, ParamId, ParamStore, Var, LAYER_NORM_EPS};
use crate::tensor::{Result, Scalar, TensorError};

/// Parameter handles of stage `i`; the optional pairs are absent when the
/// corresponding ablation switch is off.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageParams {
    pub temporal_gamma: ParamId,
    pub temporal_beta: ParamId,
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
    pub positional: Option<(ParamId, ParamId)>,
    pub mix: (ParamId, ParamId),
    pub depth_gamma: ParamId,
    pub depth_beta: ParamId,
    pub depth: (ParamId, ParamId),
    pub skip: Option<(ParamId, ParamId)>,
    pub eps1: ParamId,
    pub eps2: ParamId,
}

impl StageParams {
    /// Looks up `stage{i}.*` (1-based) in `store`.
    ///
    /// Panics if a mandatory parameter is missing; callers validate the
    /// store against its config first.
    pub fn lookup<T: Scalar>(store: &ParamStore<T>, i: usize) -> Self {
        let get = |n: &str| store.id(&format!("stage{i}.{n}"));
        let req = |n: &str| get(n).unwrap_or_else(|| panic!("stage{i}.{n} missing"));
        let pair = |w: &str, b: &str| Some((get(w)?, get(b)?));
        Self {
            temporal_gamma: req("temporal.norm.gamma"),
            temporal_beta: req("temporal.norm.beta"),
            fc1: (req("temporal.fc1.w"), req("temporal.fc1.b")),
            fc2: (req("temporal.fc2.w"), req("temporal.fc2.b")),
            positional: pair("positional.k", "positional.b"),
            mix: (req("mix.w"), req("mix.b")),
            depth_gamma: req("depth.norm.gamma"),
            depth_beta: req("depth.norm.beta"),
            depth: (req("depth.w"), req("depth.b")),
            skip: pair("skip.w", "skip.b"),
            eps1: req("eps1"),
            eps2: req("eps2"),
        }
    }
}

fn linear<T: Scalar>(g: &mut Graph<'_, T>, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
    let (w, b) = (g.param(w), g.param(b));
    g.linear(x, w, b)
}

/// Depthwise kernel-3 convolution along time, `[B, D, L] → [B, D, L]`.
/// With positional modelling ablated this is the identity.
pub fn positional_modeling<T: Scalar>(g: &mut Graph<'_, T>, s: &StageParams, x: Var) -> Result<Var> {
    match s.positional {
        Some((k, b)) => {
            let (k, b) = (g.param(k), g.param(b));
            let (ks, xs) = (g.shape(k).to_vec(), g.shape(x).to_vec());
            if xs.len() != 3 || xs[1] != ks[0] {
                return Err(TensorError::Dimension {
                    op: "positional_modeling",
                    lhs: xs,
                    rhs: ks,
                });
            }
            g.depthwise_conv1d(x, k, b)
        }
        None => Ok(x),
    }
}

/// `W₂ᵀ GELU(W₁ᵀ LN_L(x) + b₁) + b₂`, `[B, D, L] → [B, D, L]`.
pub fn temporal_mlp<T: Scalar>(g: &mut Graph<'_, T>, s: &StageParams, x: Var) -> Result<Var> {
    let (gamma, beta) = (g.param(s.temporal_gamma), g.param(s.temporal_beta));
    let n = g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)?;
    let h = linear(g, n, s.fc1)?;
    let h = g.gelu(h)?;
    linear(g, h, s.fc2)
}

/// Mixes `[pos(x) | x | mlp(x)]` from `3L` back to `L`.
pub fn temporal_feedforward<T: Scalar>(g: &mut Graph<'_, T>, s: &StageParams, x: Var) -> Result<Var> {
    let pos = positional_modeling(g, s, x)?;
    let phi = temporal_mlp(g, s, x)?;
    let cat = g.concat_last(&[pos, x, phi])?;
    linear(g, cat, s.mix)
}

/// `GELU(W LN_D(x) + b) + (ωx + b_ω)`, `[B, L, Din] → [B, L, Dout]`.
pub fn depth_block<T: Scalar>(g: &mut Graph<'_, T>, s: &StageParams, x: Var) -> Result<Var> {
    let (gamma, beta) = (g.param(s.depth_gamma), g.param(s.depth_beta));
    let n = g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)?;
    let h = linear(g, n, s.depth)?;
    let h = g.gelu(h)?;
    match s.skip {
        Some(skip) => {
            let sk = linear(g, x, skip)?;
            g.add(h, sk)
        }
        None => Ok(h),
    }
}

/// One stage: `ε₂ · δ(ε₁ · permute(γ(permute(x))) + x)`.
pub fn dense_mlp<T: Scalar>(g: &mut Graph<'_, T>, s: &StageParams, x: Var) -> Result<Var> {
    let xt = g.permute_last_two(x)?;
    let tf = temporal_feedforward(g, s, xt)?;
    let back = g.permute_last_two(tf)?;
    let eps1 = g.param(s.eps1);
    let u = g.scale_add(back, eps1, x)?;
    let d = depth_block(g, s, u)?;
    let eps2 = g.param(s.eps2);
    g.scale(d, eps2)
}
