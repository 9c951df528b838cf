//! Losses evaluated in 64-bit on logits, returning the value and its
//! gradient so they can be attached to a graph as an external scalar.

use super::{Result, TrainError};
use crate::autodiff::{Graph, Var};
use crate::data::Target;
use crate::tensor::Scalar;

/// `(loss, d loss / d logits)`.
pub type LossGrad = (f64, Vec<f64>);

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Mean over the batch of `−Σ qᵢ log softmax(z)ᵢ` with
/// `q = (1−ε)·onehot(y) + ε/C`.
pub fn cross_entropy_smoothed(
    logits: &[f64],
    classes: usize,
    targets: &[usize],
    eps: f64,
) -> Result<LossGrad> {
    if classes < 2 {
        return Err(TrainError::Invalid(
            "cross-entropy needs at least 2 classes".into(),
        ));
    }
    if logits.len() != classes * targets.len() || targets.is_empty() {
        return Err(TrainError::Invalid(format!(
            "{} logits do not match {} targets × {classes} classes",
            logits.len(),
            targets.len()
        )));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(TrainError::Invalid(format!(
            "label smoothing {eps} outside [0, 1]"
        )));
    }
    let b = targets.len() as f64;
    let off = eps / classes as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks(classes).zip(targets) {
        if y >= classes {
            return Err(TrainError::Invalid(format!(
                "target {y} out of range for {classes} classes"
            )));
        }
        let lp = log_softmax(row);
        for (i, l) in lp.iter().enumerate() {
            let q = if i == y { 1.0 - eps + off } else { off };
            // 0 · (−∞) contributes nothing
            if q > 0.0 {
                loss -= q * l;
            }
            grad.push((l.exp() - q) / b);
        }
    }
    Ok((loss / b, grad))
}

/// Mean elementwise sigmoid binary cross-entropy,
/// `max(z,0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_multilabel(logits: &[f64], targets: &[f64]) -> Result<LossGrad> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(TrainError::Invalid(format!(
            "{} logits vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(TrainError::Invalid(format!(
            "multilabel target {t} is not 0 or 1"
        )));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| {
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - y) / n
        })
        .collect();
    Ok((loss / n, grad))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Smallest value the smoothed cross-entropy can take: the entropy of the
/// smoothed target distribution.
pub fn label_smoothing_floor(classes: usize, eps: f64) -> f64 {
    let c = classes as f64;
    let on = 1.0 - eps + eps / c;
    let off = eps / c;
    let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    h(on) + (c - 1.0) * h(off)
}

/// Loss configuration for a task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Loss {
    SmoothedCrossEntropy { eps: f64 },
    Bce,
}

impl Loss {
    pub fn evaluate(&self, logits: &[f64], classes: usize, targets: &[Target]) -> Result<LossGrad> {
        match *self {
            Loss::SmoothedCrossEntropy { eps } => {
                let ys = targets
                    .iter()
                    .map(|t| match t {
                        Target::Class(c) => Ok(*c),
                        Target::Labels(_) => Err(TrainError::Invalid(
                            "cross-entropy needs single-label targets".into(),
                        )),
                    })
                    .collect::<Result<Vec<_>>>()?;
                cross_entropy_smoothed(logits, classes, &ys, eps)
            }
            Loss::Bce => {
                let mut y = vec![0.0; targets.len() * classes];
                for (b, t) in targets.iter().enumerate() {
                    let set: &[usize] = match t {
                        Target::Class(c) => std::slice::from_ref(c),
                        Target::Labels(ls) => ls,
                    };
                    for &c in set {
                        if c >= classes {
                            return Err(TrainError::Invalid(format!("label {c} out of range")));
                        }
                        y[b * classes + c] = 1.0;
                    }
                }
                bce_multilabel(logits, &y)
            }
        }
    }

    /// Attaches the loss of `logits: [B, C]` to `g`; returns the scalar
    /// node and its 64-bit value.
    pub fn attach<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        logits: Var,
        targets: &[Target],
    ) -> Result<(Var, f64)> {
        let classes = *g.shape(logits).last().unwrap_or(&0);
        let z: Vec<f64> = g.data(logits).iter().map(|v| v.f64()).collect();
        let (value, grad) = self.evaluate(&z, classes, targets)?;
        if !value.is_finite() {
            return Err(TrainError::Diverged {
                epoch: 0,
                detail: format!("loss evaluated to {value}"),
            });
        }
        let node = g.external_scalar(logits, T::of(value), grad.into_iter().map(T::of).collect())?;
        Ok((node, value))
    }
}
