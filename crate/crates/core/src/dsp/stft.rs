use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DspError, Waveform, FFT_SIZE, HOP_SECONDS, WINDOW_SECONDS};

/// Window and hop in samples, rounded down from seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameGeometry {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl FrameGeometry {
    pub fn new(sample_rate: u32, win_s: f64, hop_s: f64, fft_size: usize) -> Self {
        // the small offset keeps products like 0.01 * 16000 from flooring low
        let floor = |s: f64| (s * sample_rate as f64 + 1e-9).floor() as usize;
        Self {
            window: floor(win_s),
            hop: floor(hop_s),
            fft_size,
        }
    }

    pub fn standard(sample_rate: u32) -> Self {
        Self::new(sample_rate, WINDOW_SECONDS, HOP_SECONDS, FFT_SIZE)
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frames(&self, samples: usize) -> Option<usize> {
        (samples >= self.window).then(|| 1 + (samples - self.window) / self.hop)
    }
}

/// Symmetric Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// One-sided power spectrogram, `frames × bins`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// Reusable FFT plan and window for one frame geometry.
#[derive(Clone)]
pub struct StftPlan {
    geometry: FrameGeometry,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(geometry: FrameGeometry) -> Result<Self, DspError> {
        if geometry.window == 0 || geometry.hop == 0 || geometry.window > geometry.fft_size {
            return Err(DspError::Shape(format!(
                "window {} / hop {} do not fit fft size {}",
                geometry.window, geometry.hop, geometry.fft_size
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(geometry.fft_size);
        Ok(Self {
            window: hamming(geometry.window),
            geometry,
            fft,
        })
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.geometry
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Hamming-windowed, zero-padded `|FFT|²`.
    pub fn power(&self, samples: &[f32]) -> Result<Spectrogram, DspError> {
        let g = self.geometry;
        let frames = g.frames(samples.len()).ok_or(DspError::TooShort {
            samples: samples.len(),
            window: g.window,
        })?;
        let bins = g.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(0.0, 0.0); g.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = f * g.hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < g.window {
                    Complex::new(samples[start + i] as f64 * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            data.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
        }
        Ok(Spectrogram { frames, bins, data })
    }
}

/// Power spectrogram with the standard 25 ms / 10 ms / 1024-point geometry.
pub fn stft_power(w: &Waveform) -> Result<Spectrogram, DspError> {
    StftPlan::new(FrameGeometry::standard(w.sample_rate()))?.power(w.samples())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_at_pipeline_rate() {
        let g = FrameGeometry::standard(22050);
        assert_eq!((g.window, g.hop, g.bins()), (551, 220, 513));
        assert_eq!(g.frames(88200), Some(399));
        assert_eq!(g.frames(550), None);
        assert_eq!(g.frames(551), Some(1));
    }

    #[test]
    fn four_seconds_gives_399_frames() {
        let w = Waveform::new(vec![0.1; 88200], 22050).unwrap();
        let s = stft_power(&w).unwrap();
        assert_eq!((s.frames, s.bins), (399, 513));
    }

    #[test]
    fn silence_has_zero_power() {
        let w = Waveform::new(vec![0.0; 4000], 22050).unwrap();
        assert!(stft_power(&w).unwrap().data.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn dc_energy_lands_in_bin_zero() {
        let a = 0.3f32;
        let w = Waveform::new(vec![a; 2000], 22050).unwrap();
        let s = stft_power(&w).unwrap();
        let win_sum: f64 = hamming(551).iter().sum();
        let expected = (a as f64 * win_sum).powi(2);
        for f in 0..s.frames {
            let row = s.row(f);
            assert!((row[0] - expected).abs() / expected < 1e-6);
            assert!(row.iter().skip(1).all(|&p| p < row[0]));
        }
    }

    #[test]
    fn too_short_is_an_error() {
        let w = Waveform::new(vec![0.0; 100], 22050).unwrap();
        assert!(matches!(stft_power(&w), Err(DspError::TooShort { .. })));
    }
}
