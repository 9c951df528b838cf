use std::path::Path;

use hound::{SampleFormat, WavReader};

use super::{DspError, Waveform};

fn chunk_of(msg: &str) -> &'static str {
    if msg.contains("RIFF") {
        "RIFF"
    } else if msg.contains("WAVE") {
        "WAVE"
    } else if msg.contains("data") {
        "data"
    } else {
        "fmt"
    }
}

fn wav_error(path: &Path, err: hound::Error) -> DspError {
    let path = path.display().to_string();
    match err {
        hound::Error::IoError(e) => DspError::Io { path, source: e },
        hound::Error::FormatError(msg) => DspError::MalformedWav {
            path,
            chunk: chunk_of(msg),
            detail: msg.to_string(),
        },
        hound::Error::Unsupported => DspError::UnsupportedCodec {
            path,
            detail: "fmt chunk declares a codec other than PCM or IEEE float".into(),
        },
        other => DspError::MalformedWav {
            path,
            chunk: "data",
            detail: other.to_string(),
        },
    }
}

/// Reads 16-bit PCM or 32-bit float WAV, mono or stereo. Stereo is averaged
/// to mono and 16-bit samples are scaled by 1/32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, DspError> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels > 2 {
        return Err(DspError::UnsupportedCodec {
            path: path.display().to_string(),
            detail: format!("fmt chunk declares {channels} channels, expected 1 or 2"),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (fmt, bits) => {
            return Err(DspError::UnsupportedCodec {
                path: path.display().to_string(),
                detail: format!("fmt chunk declares {bits}-bit {fmt:?} samples"),
            })
        }
    };
    let samples = if channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|lr| (lr[0] + lr[1]) * 0.5)
            .collect()
    } else {
        interleaved
    };
    Waveform::new(samples, spec.sample_rate)
}
