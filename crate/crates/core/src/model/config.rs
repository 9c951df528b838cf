use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// Paired inverse pyramid: palindromic widths with long-range skips.
    #[default]
    Pip,
    /// Monotone stage list taken verbatim from `kappas`.
    Oms,
}

/// Architecture hyperparameters and ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipConfig {
    pub n: usize,
    pub kappas: Vec<usize>,
    pub time_length: usize,
    pub in_dim: usize,
    pub alpha: usize,
    pub num_classes: usize,
    #[serde(default = "yes")]
    pub long_range_skip: bool,
    #[serde(default = "yes")]
    pub positional_modeling: bool,
    #[serde(default = "yes")]
    pub linear_skip: bool,
    #[serde(default)]
    pub structure: Structure,
    #[serde(default = "default_eps1")]
    pub eps1_init: f64,
    #[serde(default = "default_eps2")]
    pub eps2_init: f64,
    #[serde(default = "default_rho")]
    pub rho_init: f64,
}

fn yes() -> bool {
    true
}
fn default_eps1() -> f64 {
    0.1
}
fn default_eps2() -> f64 {
    1.0
}
fn default_rho() -> f64 {
    0.1
}

/// `(input depth, output depth)` of one stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageDims {
    pub d_in: usize,
    pub d_out: usize,
}

impl PipConfig {
    /// n = 2, κ = [4, 8], L = 5, in_dim = 100, α = 3.
    pub fn base(num_classes: usize) -> Self {
        Self {
            n: 2,
            kappas: vec![4, 8],
            time_length: 5,
            in_dim: 100,
            alpha: 3,
            num_classes,
            long_range_skip: true,
            positional_modeling: true,
            linear_skip: true,
            structure: Structure::Pip,
            eps1_init: default_eps1(),
            eps2_init: default_eps2(),
            rho_init: default_rho(),
        }
    }

    fn bad(field: &'static str, reason: impl Into<String>) -> ModelError {
        ModelError::Config {
            field,
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n < 1 {
            return Err(Self::bad("n", "must be at least 1"));
        }
        if self.kappas.len() != self.n {
            return Err(Self::bad(
                "kappas",
                format!("expected {} entries (n), got {}", self.n, self.kappas.len()),
            ));
        }
        if self.kappas.iter().any(|&k| k < 1) {
            return Err(Self::bad("kappas", "every expansion rate must be at least 1"));
        }
        if self.time_length < 1 {
            return Err(Self::bad("time_length", "must be at least 1"));
        }
        if self.in_dim < 1 {
            return Err(Self::bad("in_dim", "must be at least 1"));
        }
        if self.alpha < 1 {
            return Err(Self::bad("alpha", "must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Self::bad("num_classes", "must be at least 2"));
        }
        if self.structure == Structure::Oms && self.long_range_skip {
            return Err(Self::bad(
                "long_range_skip",
                "the OMS structure has no paired stages; disable long_range_skip",
            ));
        }
        for (field, v) in [
            ("eps1_init", self.eps1_init),
            ("eps2_init", self.eps2_init),
            ("rho_init", self.rho_init),
        ] {
            if !v.is_finite() {
                return Err(Self::bad(field, "must be finite"));
            }
        }
        Ok(())
    }

    /// Stage width multipliers: `[κ1..κn..κ1]` for PIP, `kappas` for OMS.
    pub fn expansion(&self) -> Vec<usize> {
        match self.structure {
            Structure::Pip => {
                let mut w = self.kappas.clone();
                w.extend(self.kappas.iter().rev().skip(1));
                w
            }
            Structure::Oms => self.kappas.clone(),
        }
    }

    pub fn stage_dims(&self) -> Vec<StageDims> {
        let mut d_in = self.in_dim;
        self.expansion()
            .into_iter()
            .map(|k| {
                let s = StageDims {
                    d_in,
                    d_out: k * self.in_dim,
                };
                d_in = s.d_out;
                s
            })
            .collect()
    }

    /// `(earlier, later)` 0-based stage pairs joined by long-range skips.
    pub fn skip_pairs(&self) -> Vec<(usize, usize)> {
        if self.structure != Structure::Pip || !self.long_range_skip {
            return Vec::new();
        }
        (1..self.n).map(|j| (j - 1, 2 * self.n - j - 1)).collect()
    }

    pub fn output_depth(&self) -> usize {
        self.expansion().last().copied().unwrap_or(1) * self.in_dim
    }
}
