//! Central finite-difference gradient checker (64-bit).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Graph, ParamId, ParamStore, Var};
use crate::tensor::Result;

/// Coordinates with `|analytic| + |numeric|` below this are not scored.
pub const NEGLIGIBLE: f64 = 1e-8;

/// Exclusion floor for randomized inputs. Central differences with
/// `h = 1e-6` carry about 1e-10 of absolute roundoff, so a relative error
/// of 1e-4 is only resolvable for gradients of order 1e-5 and up.
pub const ROUNDOFF_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub tol: f64,
    /// Coordinates sampled per parameter; `None` checks all of them.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
    /// Coordinates with `|analytic| + |numeric|` below this are skipped.
    pub negligible: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            coords_per_param: None,
            seed: 0,
            negligible: NEGLIGIBLE,
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: Option<Coordinate>,
    /// Set when the function or a gradient produced NaN/Inf or failed.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_rel_err < self.tol
    }

    fn failed(tol: f64, why: String) -> Self {
        Self {
            tol,
            checked: 0,
            skipped: 0,
            max_rel_err: f64::INFINITY,
            worst: None,
            failure: Some(why),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

fn eval<F>(store: &ParamStore<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    Ok(g.data(loss)[0])
}

/// Compares the analytic gradient of the scalar produced by `f` against
/// `(f(θ+h) − f(θ−h)) / 2h` with `h = 1e-6 · max(1, |θ|)`.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    f: F,
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new(&*store);
        let grads = f(&mut g).and_then(|loss| g.backward(loss));
        let grads = match grads {
            Ok(gr) => gr,
            Err(e) => return GradCheckReport::failed(cfg.tol, format!("forward/backward: {e}")),
        };
        params
            .iter()
            .map(|&id| {
                grads
                    .param(id)
                    .map(|s| s.to_vec())
                    .unwrap_or_else(|| vec![0.0; store.value(id).len()])
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        tol: cfg.tol,
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst: None,
        failure: None,
    };

    for (&id, grad) in params.iter().zip(&analytic) {
        if grad.iter().any(|v| !v.is_finite()) {
            report.failure = Some(format!("non-finite gradient for {}", store.get(id).name));
            report.max_rel_err = f64::INFINITY;
            return report;
        }
        let n = grad.len();
        let coords: Vec<usize> = match cfg.coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.value(id).data()[i];
            let h = 1e-6 * orig.abs().max(1.0);
            store.get_mut(id).tensor.data_mut()[i] = orig + h;
            let plus = eval(store, &f);
            store.get_mut(id).tensor.data_mut()[i] = orig - h;
            let minus = eval(store, &f);
            store.get_mut(id).tensor.data_mut()[i] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
                _ => {
                    report.failure = Some(format!(
                        "non-finite perturbed loss at {}[{i}]",
                        store.get(id).name
                    ));
                    report.max_rel_err = f64::INFINITY;
                    return report;
                }
            };
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad[i];
            if a.abs() + numeric.abs() < cfg.negligible {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let err = relative_error(a, numeric);
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(Coordinate {
                    param: store.get(id).name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_err: err,
                });
            }
        }
    }
    report
}
