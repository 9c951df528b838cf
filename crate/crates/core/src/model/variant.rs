use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{PipConfig, PipmnModel, Result, Structure};
use crate::dsp::FeatureKind;
use crate::tensor::Scalar;

/// Stage widths of the monotone comparison structure.
pub const OMS_KAPPAS: [usize; 3] = [4, 8, 16];

/// Rows of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    NoLongRangeSkip,
    NoPositional,
    NoLinearSkip,
    Oms,
    Mfcc50,
    Mel100,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Base,
        Variant::NoLongRangeSkip,
        Variant::NoPositional,
        Variant::NoLinearSkip,
        Variant::Oms,
        Variant::Mfcc50,
        Variant::Mel100,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::NoLongRangeSkip => "no_long_range_skip",
            Variant::NoPositional => "no_positional",
            Variant::NoLinearSkip => "no_linear_skip",
            Variant::Oms => "oms",
            Variant::Mfcc50 => "mfcc50",
            Variant::Mel100 => "mel100",
        }
    }

    pub fn feature_kind(self) -> FeatureKind {
        match self {
            Variant::Mfcc50 => FeatureKind::Mfcc50,
            Variant::Mel100 => FeatureKind::Mel100,
            _ => FeatureKind::Stack,
        }
    }

    /// Derives this variant's architecture from `base`.
    pub fn config(self, base: &PipConfig) -> PipConfig {
        let mut c = base.clone();
        match self {
            Variant::Base | Variant::Mel100 => {}
            Variant::NoLongRangeSkip => c.long_range_skip = false,
            Variant::NoPositional => c.positional_modeling = false,
            Variant::NoLinearSkip => c.linear_skip = false,
            Variant::Oms => {
                c.structure = Structure::Oms;
                c.kappas = OMS_KAPPAS.to_vec();
                c.n = OMS_KAPPAS.len();
                c.long_range_skip = false;
            }
            Variant::Mfcc50 => c.in_dim = FeatureKind::Mfcc50.dims(),
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// Validates `cfg` and builds a freshly initialised model.
pub fn build_variant<T: Scalar>(cfg: &PipConfig, seed: u64) -> Result<PipmnModel<T>> {
    PipmnModel::new(cfg.clone(), seed)
}
