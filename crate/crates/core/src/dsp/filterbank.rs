use serde::{Deserialize, Serialize};

use super::DspError;

/// Chirp constant for the gammachirp family.
pub const GAMMACHIRP_C: f64 = -2.0;
const GAMMATONE_ORDER: f64 = 4.0;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Traunmüller Bark scale.
pub fn bark(f: f64) -> f64 {
    26.81 * f / (1960.0 + f) - 0.53
}

pub fn bark_to_hz(b: f64) -> f64 {
    1960.0 * (b + 0.53) / (26.28 - b)
}

/// Equivalent rectangular bandwidth in Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// ERB-rate (number of ERBs below `f`).
pub fn erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterFamily {
    Mel,
    Linear,
    Bark,
    Gammatone,
    Gammachirp,
}

impl FilterFamily {
    fn to_scale(self, f: f64) -> f64 {
        match self {
            Self::Mel => hz_to_mel(f),
            Self::Linear => f,
            Self::Bark => bark(f),
            Self::Gammatone | Self::Gammachirp => erb_rate(f),
        }
    }

    fn scale_to_hz(self, v: f64) -> f64 {
        match self {
            Self::Mel => mel_to_hz(v),
            Self::Linear => v,
            Self::Bark => bark_to_hz(v),
            Self::Gammatone | Self::Gammachirp => erb_rate_to_hz(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterbankSpec {
    pub family: FilterFamily,
    pub n_filters: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub fft_size: usize,
}

impl FilterbankSpec {
    /// 40 filters spanning 0 Hz to Nyquist.
    pub fn standard(family: FilterFamily, sample_rate: u32, fft_size: usize) -> Self {
        Self {
            family,
            n_filters: 40,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
            fft_size,
        }
    }
}

/// Continuous frequency response of one filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterShape {
    Triangle {
        left: f64,
        center: f64,
        right: f64,
    },
    /// Gammatone magnitude, optionally with a chirp term, times `gain`.
    Gamma {
        center: f64,
        bandwidth: f64,
        chirp: f64,
        gain: f64,
    },
}

impl FilterShape {
    pub fn response(&self, f: f64) -> f64 {
        match *self {
            Self::Triangle { left, center, right } => {
                if f <= left || f >= right {
                    0.0
                } else if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                }
            }
            Self::Gamma {
                center,
                bandwidth,
                chirp,
                gain,
            } => {
                let x = (f - center) / bandwidth;
                let mag = (1.0 + x * x).powf(-GAMMATONE_ORDER / 2.0);
                gain * mag * (chirp * x.atan()).exp()
            }
        }
    }

    pub fn center(&self) -> f64 {
        match *self {
            Self::Triangle { center, .. } | Self::Gamma { center, .. } => center,
        }
    }
}

/// Filter weights sampled at the one-sided FFT bin frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Filterbank {
    pub spec: FilterbankSpec,
    pub shapes: Vec<FilterShape>,
    /// `n_filters × bins`, row-major.
    pub weights: Vec<f64>,
    pub bins: usize,
}

impl Filterbank {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.bins..(i + 1) * self.bins]
    }

    pub fn n_filters(&self) -> usize {
        self.shapes.len()
    }

    /// Filter energies for one power-spectrum frame.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.chunks(self.bins)) {
            *o = row.iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

pub fn build_filterbank(spec: &FilterbankSpec, sample_rate: u32) -> Result<Filterbank, DspError> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(spec.fmin >= 0.0 && spec.fmin < spec.fmax && spec.fmax <= nyquist) {
        return Err(DspError::InvalidFilterbank(format!(
            "need 0 <= fmin < fmax <= {nyquist}, got [{}, {}]",
            spec.fmin, spec.fmax
        )));
    }
    if spec.n_filters == 0 || spec.fft_size < 2 {
        return Err(DspError::InvalidFilterbank(
            "need at least one filter and fft_size >= 2".into(),
        ));
    }
    let family = spec.family;
    let lo = family.to_scale(spec.fmin);
    let hi = family.to_scale(spec.fmax);
    let step = (hi - lo) / (spec.n_filters + 1) as f64;
    let edges: Vec<f64> = (0..spec.n_filters + 2)
        .map(|i| family.scale_to_hz(lo + step * i as f64))
        .collect();

    let bins = spec.fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / spec.fft_size as f64;
    let mut shapes = Vec::with_capacity(spec.n_filters);
    let mut weights = Vec::with_capacity(spec.n_filters * bins);
    for i in 0..spec.n_filters {
        let mut shape = match family {
            FilterFamily::Mel | FilterFamily::Linear | FilterFamily::Bark => FilterShape::Triangle {
                left: edges[i],
                center: edges[i + 1],
                right: edges[i + 2],
            },
            FilterFamily::Gammatone | FilterFamily::Gammachirp => {
                let center = edges[i + 1];
                FilterShape::Gamma {
                    center,
                    bandwidth: 1.019 * erb(center),
                    chirp: if family == FilterFamily::Gammachirp {
                        GAMMACHIRP_C
                    } else {
                        0.0
                    },
                    gain: 1.0,
                }
            }
        };
        let mut row: Vec<f64> = (0..bins).map(|k| shape.response(k as f64 * bin_hz)).collect();
        let peak = row.iter().copied().fold(0.0, f64::max);
        if peak.is_nan() || peak <= 0.0 || row.iter().any(|w| !w.is_finite()) {
            return Err(DspError::InvalidFilterbank(format!(
                "{family:?} filter {i} centred at {:.1} Hz has empty support at fft size {}",
                shape.center(),
                spec.fft_size
            )));
        }
        if let FilterShape::Gamma { gain, .. } = &mut shape {
            *gain = 1.0 / peak;
            row.iter_mut().for_each(|w| *w /= peak);
        }
        shapes.push(shape);
        weights.extend(row);
    }
    Ok(Filterbank {
        spec: spec.clone(),
        shapes,
        weights,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [FilterFamily; 5] = [
        FilterFamily::Mel,
        FilterFamily::Linear,
        FilterFamily::Bark,
        FilterFamily::Gammatone,
        FilterFamily::Gammachirp,
    ];

    #[test]
    fn mel_of_700_hz() {
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn scale_inverses() {
        for f in [0.0, 100.0, 1000.0, 11025.0] {
            assert!((bark_to_hz(bark(f)) - f).abs() < 1e-9);
            assert!((erb_rate_to_hz(erb_rate(f)) - f).abs() < 1e-6);
        }
    }

    #[test]
    fn every_family_is_nonnegative_and_finite() {
        for fam in ALL {
            let fb = build_filterbank(&FilterbankSpec::standard(fam, 22050, 1024), 22050).unwrap();
            assert_eq!(fb.n_filters(), 40);
            assert_eq!(fb.bins, 513);
            for i in 0..40 {
                let row = fb.row(i);
                assert!(row.iter().all(|w| w.is_finite() && *w >= 0.0));
                assert!(row.iter().sum::<f64>() > 0.0, "{fam:?} {i}");
            }
        }
    }

    #[test]
    fn triangle_is_one_at_center() {
        for fam in [FilterFamily::Mel, FilterFamily::Linear, FilterFamily::Bark] {
            let fb = build_filterbank(&FilterbankSpec::standard(fam, 22050, 1024), 22050).unwrap();
            for s in &fb.shapes {
                assert_eq!(s.response(s.center()), 1.0);
            }
        }
    }

    #[test]
    fn gamma_families_peak_at_one() {
        for fam in [FilterFamily::Gammatone, FilterFamily::Gammachirp] {
            let fb = build_filterbank(&FilterbankSpec::standard(fam, 22050, 1024), 22050).unwrap();
            for i in 0..40 {
                let peak = fb.row(i).iter().copied().fold(0.0, f64::max);
                assert!((peak - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gammachirp_is_asymmetric() {
        let s = FilterShape::Gamma {
            center: 1000.0,
            bandwidth: 1.019 * erb(1000.0),
            chirp: GAMMACHIRP_C,
            gain: 1.0,
        };
        assert!(s.response(900.0) > s.response(1100.0));
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut spec = FilterbankSpec::standard(FilterFamily::Mel, 22050, 1024);
        spec.fmax = 20000.0;
        assert!(build_filterbank(&spec, 22050).is_err());
        spec.fmax = 100.0;
        spec.fmin = 200.0;
        assert!(build_filterbank(&spec, 22050).is_err());
    }
}
