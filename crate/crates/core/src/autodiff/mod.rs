//! Reverse-mode differentiation over a recorded op log.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward
//! pass. Every op validates shapes, computes its output eagerly, and
//! records what the backward pass needs. [`Graph::backward`] replays the
//! log in reverse and returns [`Gradients`], which the caller folds into
//! the store with [`ParamStore::accumulate`].

pub mod gradcheck;
mod kernels;
mod params;

use std::collections::HashMap;

pub use kernels::{gelu as gelu_scalar, pool_segment};
pub use params::{ParamId, ParamStore, Parameter};

use crate::tensor::{numel, Result, Scalar, Tensor, TensorError};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Vec<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        beta: Var,
    },
    Gelu {
        x: Var,
    },
    DepthwiseConv {
        x: Var,
        k: Var,
        b: Var,
    },
    Pool {
        x: Var,
        out_len: usize,
    },
    Permute {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    ScaleAdd {
        x: Var,
        s: Var,
        y: Option<Var>,
    },
    Add {
        x: Var,
        y: Var,
    },
    Mul {
        x: Var,
        y: Var,
    },
    MeanTime {
        x: Var,
    },
    Sum {
        x: Var,
    },
    /// Scalar computed outside the graph with a known gradient w.r.t. `x`.
    External {
        x: Var,
        local_grad: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Value<T>,
    op: Op<T>,
}

/// Op log for one forward pass.
pub struct Graph<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    backward_done: bool,
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. any recorded value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}

fn check_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            backward_done: false,
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.store.value(*id).data(),
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v), self.data(v).to_vec()).expect("graph node shape is consistent")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Result<Var> {
        debug_assert_eq!(numel(&shape), data.len());
        check_finite(op_name, &data)?;
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant or input tensor.
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push("input", shape, t.into_data(), Op::Leaf)
    }

    /// Records a parameter. Repeated calls return the same handle, so a
    /// reused parameter accumulates one gradient contribution per use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            shape: self.store.value(id).shape().to_vec(),
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `y[..., j] = Σ_i x[..., i] · w[i, j] + b[j]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        let fin = *xs.last().ok_or_else(|| TensorError::Dimension {
            op: "linear",
            lhs: xs.clone(),
            rhs: ws.clone(),
        })?;
        if ws.len() != 2 || ws[0] != fin {
            return Err(TensorError::Dimension {
                op: "linear",
                lhs: xs,
                rhs: ws,
            });
        }
        let fout = ws[1];
        if bs != [fout] {
            return Err(TensorError::Dimension {
                op: "linear bias",
                lhs: ws,
                rhs: bs,
            });
        }
        let y = kernels::matmul_bias(self.data(x), fin, self.data(w), fout, self.data(b));
        let mut shape = xs;
        *shape.last_mut().unwrap() = fout;
        self.push("linear", shape, y, Op::Linear { x, w, b })
    }

    /// Normalizes over the last axis with biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let f = xs.last().copied().unwrap_or(0);
        if f == 0 {
            return Err(TensorError::Shape {
                shape: xs,
                reason: "layer_norm needs a non-empty last axis".into(),
            });
        }
        for p in [gamma, beta] {
            if self.shape(p) != [f] {
                return Err(TensorError::Dimension {
                    op: "layer_norm",
                    lhs: xs,
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (y, xhat, inv_std) =
            kernels::layer_norm(self.data(x), f, self.data(gamma), self.data(beta), T::of(eps));
        self.push(
            "layer_norm",
            xs,
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let y = self.data(x).iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("gelu", shape, y, Op::Gelu { x })
    }

    /// Per-channel kernel-3 convolution along the last axis of `[B, D, L]`.
    pub fn depthwise_conv1d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[2] == 0 {
            return Err(TensorError::Shape {
                shape: xs,
                reason: "depthwise_conv1d expects [B, D, L] with L >= 1".into(),
            });
        }
        let (d, l) = (xs[1], xs[2]);
        if self.shape(k) != [d, 3] || self.shape(b) != [d] {
            return Err(TensorError::Dimension {
                op: "depthwise_conv1d",
                lhs: xs,
                rhs: self.shape(k).to_vec(),
            });
        }
        let y = kernels::depthwise_conv3(self.data(x), d, l, self.data(k), self.data(b));
        self.push("depthwise_conv1d", xs, y, Op::DepthwiseConv { x, k, b })
    }

    /// Averages `[B, T, D]` down to `[B, out_len, D]`.
    pub fn adaptive_avg_pool_time(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(TensorError::Shape {
                shape: xs,
                reason: "adaptive_avg_pool_time expects [B, T, D]".into(),
            });
        }
        let (b, t, d) = (xs[0], xs[1], xs[2]);
        if out_len == 0 || out_len > t {
            return Err(TensorError::InvalidArgument {
                op: "adaptive_avg_pool_time",
                reason: format!("out_len {out_len} must be in 1..={t}"),
            });
        }
        let y = kernels::adaptive_pool(self.data(x), b, t, d, out_len);
        self.push(
            "adaptive_avg_pool_time",
            vec![b, out_len, d],
            y,
            Op::Pool { x, out_len },
        )
    }

    /// `[B, P, Q] -> [B, Q, P]`.
    pub fn permute_last_two(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(TensorError::Shape {
                shape: xs,
                reason: "permute_last_two expects rank 3".into(),
            });
        }
        let y = kernels::transpose_last_two(self.data(x), xs[0], xs[1], xs[2]);
        self.push(
            "permute_last_two",
            vec![xs[0], xs[2], xs[1]],
            y,
            Op::Permute { x },
        )
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat_last",
            reason: "no inputs".into(),
        })?;
        let lead = self.shape(*first).to_vec();
        if lead.is_empty() {
            return Err(TensorError::Shape {
                shape: lead,
                reason: "concat_last needs rank >= 1".into(),
            });
        }
        let lead_n = lead.len() - 1;
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != lead.len() || s[..lead_n] != lead[..lead_n] {
                return Err(TensorError::Dimension {
                    op: "concat_last",
                    lhs: lead.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[lead_n];
        }
        let rows = numel(&lead[..lead_n]);
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &v in xs {
                let w = self.shape(v)[lead_n];
                y.extend_from_slice(&self.data(v)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape[lead_n] = total;
        self.push("concat_last", shape, y, Op::Concat { xs: xs.to_vec() })
    }

    fn check_scalar(&self, op: &'static str, s: Var) -> Result<()> {
        if numel(self.shape(s)) != 1 {
            return Err(TensorError::Dimension {
                op,
                lhs: vec![1],
                rhs: self.shape(s).to_vec(),
            });
        }
        Ok(())
    }

    /// `s · x + y` with a scalar `s`.
    pub fn scale_add(&mut self, x: Var, s: Var, y: Var) -> Result<Var> {
        self.check_scalar("scale_add", s)?;
        if self.shape(x) != self.shape(y) {
            return Err(TensorError::Dimension {
                op: "scale_add",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(y).to_vec(),
            });
        }
        let sv = self.data(s)[0];
        let out = self
            .data(x)
            .iter()
            .zip(self.data(y))
            .map(|(&a, &b)| sv * a + b)
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("scale_add", shape, out, Op::ScaleAdd { x, s, y: Some(y) })
    }

    /// `s · x` with a scalar `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check_scalar("scale", s)?;
        let sv = self.data(s)[0];
        let out = self.data(x).iter().map(|&a| sv * a).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, out, Op::ScaleAdd { x, s, y: None })
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        if self.shape(x) != self.shape(y) {
            return Err(TensorError::Dimension {
                op: "add",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(y).to_vec(),
            });
        }
        let out = self
            .data(x)
            .iter()
            .zip(self.data(y))
            .map(|(&a, &b)| a + b)
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("add", shape, out, Op::Add { x, y })
    }

    /// Elementwise product.
    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        if self.shape(x) != self.shape(y) {
            return Err(TensorError::Dimension {
                op: "mul",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(y).to_vec(),
            });
        }
        let out = self
            .data(x)
            .iter()
            .zip(self.data(y))
            .map(|(&a, &b)| a * b)
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("mul", shape, out, Op::Mul { x, y })
    }

    /// Mean over axis 1 of `[B, L, D]`.
    pub fn mean_over_time(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[1] == 0 {
            return Err(TensorError::Shape {
                shape: xs,
                reason: "mean_over_time expects [B, L, D] with L >= 1".into(),
            });
        }
        let (b, l, d) = (xs[0], xs[1], xs[2]);
        let inv = T::one() / T::of(l as f64);
        let xd = self.data(x);
        let mut y = vec![T::zero(); b * d];
        for bi in 0..b {
            let yr = &mut y[bi * d..(bi + 1) * d];
            for t in 0..l {
                let xr = &xd[(bi * l + t) * d..(bi * l + t + 1) * d];
                yr.iter_mut().zip(xr).for_each(|(a, &v)| *a += v);
            }
            yr.iter_mut().for_each(|a| *a *= inv);
        }
        self.push("mean_over_time", vec![b, d], y, Op::MeanTime { x })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().copied().sum::<T>();
        self.push("sum", Vec::new(), vec![s], Op::Sum { x })
    }

    /// Records a scalar computed outside the graph from `x`, together with
    /// its gradient w.r.t. `x`. Losses use this.
    pub fn external_scalar(&mut self, x: Var, value: T, local_grad: Vec<T>) -> Result<Var> {
        if local_grad.len() != numel(self.shape(x)) {
            return Err(TensorError::Dimension {
                op: "external_scalar",
                lhs: self.shape(x).to_vec(),
                rhs: vec![local_grad.len()],
            });
        }
        self.push(
            "external_scalar",
            Vec::new(),
            vec![value],
            Op::External { x, local_grad },
        )
    }

    /// Propagates d(loss)/d(node) for every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(TensorError::BackwardRepeated);
        }
        if numel(self.shape(loss)) != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[i]) {
                params.push((*id, g.clone()));
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let fin = *self.shape(*x).last().unwrap();
                let fout = self.shape(*w)[1];
                let (dx, dw, db) = kernels::matmul_bias_backward(self.data(*x), fin, self.data(*w), fout, g);
                add_into(&mut grads[x.0], &dx);
                add_into(&mut grads[w.0], &dw);
                add_into(&mut grads[b.0], &db);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let f = *node.shape.last().unwrap();
                let (dx, dg, db) = kernels::layer_norm_backward(xhat, inv_std, f, self.data(*gamma), g);
                add_into(&mut grads[x.0], &dx);
                add_into(&mut grads[gamma.0], &dg);
                add_into(&mut grads[beta.0], &db);
            }
            Op::Gelu { x } => {
                let dx: Vec<T> = self
                    .data(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| gv * kernels::gelu_grad(v))
                    .collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::DepthwiseConv { x, k, b } => {
                let s = self.shape(*x);
                let (dx, dk, db) =
                    kernels::depthwise_conv3_backward(self.data(*x), s[1], s[2], self.data(*k), g);
                add_into(&mut grads[x.0], &dx);
                add_into(&mut grads[k.0], &dk);
                add_into(&mut grads[b.0], &db);
            }
            Op::Pool { x, out_len } => {
                let s = self.shape(*x);
                let dx = kernels::adaptive_pool_backward(g, s[0], s[1], s[2], *out_len);
                add_into(&mut grads[x.0], &dx);
            }
            Op::Permute { x } => {
                let s = &node.shape;
                let dx = kernels::transpose_last_two(g, s[0], s[1], s[2]);
                add_into(&mut grads[x.0], &dx);
            }
            Op::Concat { xs } => {
                let last = node.shape.len() - 1;
                let total = node.shape[last];
                let rows = numel(&node.shape[..last]);
                let mut offset = 0;
                for v in xs {
                    let w = self.shape(*v)[last];
                    let mut dx = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dx.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    add_into(&mut grads[v.0], &dx);
                    offset += w;
                }
            }
            Op::ScaleAdd { x, s, y } => {
                let sv = self.data(*s)[0];
                let dx: Vec<T> = g.iter().map(|&gv| gv * sv).collect();
                let ds: T = g.iter().zip(self.data(*x)).map(|(&gv, &xv)| gv * xv).sum();
                add_into(&mut grads[x.0], &dx);
                add_into(&mut grads[s.0], &[ds]);
                if let Some(y) = y {
                    add_into(&mut grads[y.0], g);
                }
            }
            Op::Add { x, y } => {
                add_into(&mut grads[x.0], g);
                add_into(&mut grads[y.0], g);
            }
            Op::Mul { x, y } => {
                let dx: Vec<T> = g.iter().zip(self.data(*y)).map(|(&a, &b)| a * b).collect();
                let dy: Vec<T> = g.iter().zip(self.data(*x)).map(|(&a, &b)| a * b).collect();
                add_into(&mut grads[x.0], &dx);
                add_into(&mut grads[y.0], &dy);
            }
            Op::MeanTime { x } => {
                let s = self.shape(*x);
                let (b, l, d) = (s[0], s[1], s[2]);
                let inv = T::one() / T::of(l as f64);
                let mut dx = vec![T::zero(); b * l * d];
                for bi in 0..b {
                    for t in 0..l {
                        for j in 0..d {
                            dx[(bi * l + t) * d + j] = g[bi * d + j] * inv;
                        }
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::Sum { x } => {
                let dx = vec![g[0]; numel(self.shape(*x))];
                add_into(&mut grads[x.0], &dx);
            }
            Op::External { x, local_grad } => {
                let dx: Vec<T> = local_grad.iter().map(|&v| v * g[0]).collect();
                add_into(&mut grads[x.0], &dx);
            }
        }
    }
}
