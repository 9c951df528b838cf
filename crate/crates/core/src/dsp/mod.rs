//! Audio front end: WAV decoding, resampling, fixed-length segmentation,
//! short-time power spectra, and the cepstral feature families stacked
//! into the model input.

mod cepstra;
mod filterbank;
mod pipf;
mod stft;
mod wav;

use thiserror::Error;

pub use cepstra::{
    cepstra, dct2_ortho, extract_stack, log_energies, FeatureClip, FeatureExtractor, FeatureKind,
    FeatureMatrix, SegmentSource, LOG_FLOOR, STACK_ORDER,
};
pub use filterbank::{
    bark, bark_to_hz, build_filterbank, erb, erb_rate, erb_rate_to_hz, hz_to_mel, mel_to_hz, FilterFamily,
    FilterShape, Filterbank, FilterbankSpec, GAMMACHIRP_C,
};
pub use pipf::{read_pipf, read_pipf_header, write_pipf, PIPF_MAGIC, PIPF_VERSION};
pub use stft::{hamming, stft_power, FrameGeometry, Spectrogram, StftPlan};
pub use wav::load_wav;

/// Sample rate every clip is brought to before feature extraction.
pub const PIPELINE_RATE: u32 = 22050;
/// Segment length in seconds.
pub const SEGMENT_SECONDS: f64 = 4.0;
pub const WINDOW_SECONDS: f64 = 0.025;
pub const HOP_SECONDS: f64 = 0.01;
pub const FFT_SIZE: usize = 1024;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed WAV {path}: {detail} (chunk `{chunk}`)")]
    MalformedWav {
        path: String,
        chunk: &'static str,
        detail: String,
    },
    #[error("unsupported WAV codec in {path}: {detail}")]
    UnsupportedCodec { path: String, detail: String },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("clip of {samples} samples is shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("invalid filterbank: {0}")]
    InvalidFilterbank(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed feature file {path}: {detail}")]
    MalformedPipf { path: String, detail: String },
}

/// Mono audio in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::InvalidWaveform(format!("non-finite sample at {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, factor: f32) -> Result<Self, DspError> {
        Self::new(
            self.samples.iter().map(|s| s * factor).collect(),
            self.sample_rate,
        )
    }
}

/// Linear-interpolation resampling; output length is
/// `round(len · target / source)`.
pub fn resample(w: &Waveform, target_hz: u32) -> Result<Waveform, DspError> {
    if target_hz == 0 {
        return Err(DspError::InvalidWaveform("target rate must be positive".into()));
    }
    if w.is_empty() {
        return Err(DspError::Empty("resample"));
    }
    if target_hz == w.sample_rate {
        return Ok(w.clone());
    }
    let src = w.samples();
    let ratio = w.sample_rate as f64 / target_hz as f64;
    let out_len = (src.len() as f64 * target_hz as f64 / w.sample_rate as f64).round() as usize;
    let last = src.len() - 1;
    let out = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = (pos.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = pos - i0 as f64;
            (src[i0] as f64 * (1.0 - frac) + src[i1] as f64 * frac) as f32
        })
        .collect();
    Waveform::new(out, target_hz)
}

/// Splits into non-overlapping windows of `seconds`, starting at sample 0.
///
/// A trailing partial window is kept (zero-padded) only when it covers
/// more than half a window; a clip shorter than one window always yields
/// one padded segment. A 30 s clip at 4 s therefore gives 7 segments.
pub fn segment_clip(w: &Waveform, seconds: f64) -> Vec<Waveform> {
    assert!(seconds > 0.0, "segment length must be positive");
    let win = (seconds * w.sample_rate as f64).round() as usize;
    let full = w.len() / win;
    let rem = w.len() % win;
    let mut out: Vec<Waveform> = (0..full)
        .map(|i| Waveform {
            samples: w.samples[i * win..(i + 1) * win].to_vec(),
            sample_rate: w.sample_rate,
        })
        .collect();
    if full == 0 || 2 * rem > win {
        let mut tail = w.samples[full * win..].to_vec();
        tail.resize(win, 0.0);
        out.push(Waveform {
            samples: tail,
            sample_rate: w.sample_rate,
        });
    }
    out
}
