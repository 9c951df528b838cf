use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::filterbank::{build_filterbank, FilterFamily, Filterbank, FilterbankSpec};
use super::stft::{FrameGeometry, Spectrogram, StftPlan};
use super::{DspError, Waveform, FFT_SIZE, PIPELINE_RATE};

/// Added to filter energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Column order of the stacked feature: NGCC | MFCC | GFCC | LFCC | BFCC.
pub const STACK_ORDER: [FilterFamily; 5] = [
    FilterFamily::Gammachirp,
    FilterFamily::Mel,
    FilterFamily::Gammatone,
    FilterFamily::Linear,
    FilterFamily::Bark,
];

const STACK_FILTERS: usize = 40;
const STACK_COEFFS: usize = 20;
const WIDE_MEL_FILTERS: usize = 100;
const MFCC_ONLY_COEFFS: usize = 50;

/// Row-major `frames × dims` float matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dims: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dims: usize, data: Vec<f32>) -> Result<Self, DspError> {
        if frames * dims != data.len() {
            return Err(DspError::Shape(format!(
                "{frames}x{dims} matrix needs {} values, got {}",
                frames * dims,
                data.len()
            )));
        }
        Ok(Self { frames, dims, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn column(&self, j: usize) -> Vec<f32> {
        (0..self.frames).map(|i| self.data[i * self.dims + j]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Which input representation to extract.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Five stacked 20-coefficient cepstra (100 dims).
    #[default]
    Stack,
    /// 50 MFCCs from a 100-filter mel bank.
    Mfcc50,
    /// 100-band log-mel energies without a DCT.
    Mel100,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [Self::Stack, Self::Mfcc50, Self::Mel100];

    pub fn dims(self) -> usize {
        match self {
            Self::Stack => STACK_ORDER.len() * STACK_COEFFS,
            Self::Mfcc50 => MFCC_ONLY_COEFFS,
            Self::Mel100 => WIDE_MEL_FILTERS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Stack => "stack",
            Self::Mfcc50 => "mfcc50",
            Self::Mel100 => "mel100",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown feature kind `{s}` (stack, mfcc50, mel100)"))
    }
}

/// Orthonormal DCT-II of `x`, keeping the first `keep` coefficients.
pub fn dct2_ortho(x: &[f64], keep: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..keep)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, &v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// `ln(fb · power + LOG_FLOOR)` per frame, `frames × n_filters`.
pub fn log_energies(power: &Spectrogram, fb: &Filterbank) -> Result<Vec<f64>, DspError> {
    if power.bins != fb.bins {
        return Err(DspError::Shape(format!(
            "spectrogram has {} bins, filterbank expects {}",
            power.bins, fb.bins
        )));
    }
    let nf = fb.n_filters();
    let mut out = vec![0.0; power.frames * nf];
    for f in 0..power.frames {
        let row = &mut out[f * nf..(f + 1) * nf];
        fb.apply(power.row(f), row);
        row.iter_mut().for_each(|e| *e = (*e + LOG_FLOOR).ln());
    }
    Ok(out)
}

/// Cepstral coefficients `frames × n_coeff`.
pub fn cepstra(power: &Spectrogram, fb: &Filterbank, n_coeff: usize) -> Result<Vec<f64>, DspError> {
    let nf = fb.n_filters();
    if n_coeff > nf {
        return Err(DspError::Shape(format!(
            "cannot keep {n_coeff} coefficients from {nf} filters"
        )));
    }
    let logs = log_energies(power, fb)?;
    Ok(logs.chunks(nf).flat_map(|r| dct2_ortho(r, n_coeff)).collect())
}

/// Holds the FFT plan and filterbanks for one [`FeatureKind`]; cheap to
/// share across threads.
#[derive(Clone)]
pub struct FeatureExtractor {
    kind: FeatureKind,
    plan: StftPlan,
    banks: Vec<Filterbank>,
    sample_rate: u32,
}

impl fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("kind", &self.kind)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl FeatureExtractor {
    pub fn new(kind: FeatureKind) -> Result<Self, DspError> {
        Self::with_rate(kind, PIPELINE_RATE)
    }

    pub fn with_rate(kind: FeatureKind, sample_rate: u32) -> Result<Self, DspError> {
        let plan = StftPlan::new(FrameGeometry::standard(sample_rate))?;
        let banks = match kind {
            FeatureKind::Stack => STACK_ORDER
                .iter()
                .map(|&fam| {
                    let mut spec = FilterbankSpec::standard(fam, sample_rate, FFT_SIZE);
                    spec.n_filters = STACK_FILTERS;
                    build_filterbank(&spec, sample_rate)
                })
                .collect::<Result<_, _>>()?,
            FeatureKind::Mfcc50 | FeatureKind::Mel100 => {
                let mut spec = FilterbankSpec::standard(FilterFamily::Mel, sample_rate, FFT_SIZE);
                spec.n_filters = WIDE_MEL_FILTERS;
                vec![build_filterbank(&spec, sample_rate)?]
            }
        };
        Ok(Self {
            kind,
            plan,
            banks,
            sample_rate,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn banks(&self) -> &[Filterbank] {
        &self.banks
    }

    pub fn power(&self, w: &Waveform) -> Result<Spectrogram, DspError> {
        if w.sample_rate() != self.sample_rate {
            return Err(DspError::InvalidWaveform(format!(
                "expected {} Hz audio, got {} Hz",
                self.sample_rate,
                w.sample_rate()
            )));
        }
        self.plan.power(w.samples())
    }

    pub fn extract(&self, w: &Waveform) -> Result<FeatureMatrix, DspError> {
        let power = self.power(w)?;
        let frames = power.frames;
        let dims = self.kind.dims();
        let mut data = vec![0f32; frames * dims];
        match self.kind {
            FeatureKind::Stack => {
                for (b, fb) in self.banks.iter().enumerate() {
                    let c = cepstra(&power, fb, STACK_COEFFS)?;
                    for f in 0..frames {
                        let dst = &mut data[f * dims + b * STACK_COEFFS..f * dims + (b + 1) * STACK_COEFFS];
                        for (d, &v) in dst.iter_mut().zip(&c[f * STACK_COEFFS..(f + 1) * STACK_COEFFS]) {
                            *d = v as f32;
                        }
                    }
                }
            }
            FeatureKind::Mfcc50 => {
                let c = cepstra(&power, &self.banks[0], MFCC_ONLY_COEFFS)?;
                data.iter_mut().zip(&c).for_each(|(d, &v)| *d = v as f32);
            }
            FeatureKind::Mel100 => {
                let e = log_energies(&power, &self.banks[0])?;
                data.iter_mut().zip(&e).for_each(|(d, &v)| *d = v as f32);
            }
        }
        FeatureMatrix::new(frames, dims, data)
    }
}

/// Stacked `[NGCC | MFCC | GFCC | LFCC | BFCC]` features of a pipeline-rate
/// clip.
pub fn extract_stack(w: &Waveform) -> Result<FeatureMatrix, DspError> {
    FeatureExtractor::new(FeatureKind::Stack)?.extract(w)
}

/// Where a segment came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSource {
    pub file: String,
    pub segment: usize,
}

/// One segment's features with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureClip {
    pub features: FeatureMatrix,
    pub clip_id: String,
    pub labels: Vec<String>,
    pub source: SegmentSource,
}
