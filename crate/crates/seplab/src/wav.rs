//! Mono WAV input and output at the working sample rate.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use seplab_core::SAMPLE_RATE;

use crate::error::{Error, Result};

/// Reads a WAV file of any integer or float format, averaging channels.
/// Returns the samples in `[-1, 1]` scale and the file's sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = WavReader::open(path).map_err(|e| Error::format(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>(),
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 * scale)).collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::format(path, e))?;
    let mono = interleaved.chunks(channels).map(|c| c.iter().sum::<f64>() / channels as f64).collect();
    Ok((mono, spec.sample_rate))
}

/// Reads a WAV file and resamples it to [`SAMPLE_RATE`] if needed.
pub fn read_mono(path: &Path) -> Result<Vec<f64>> {
    let (x, rate) = read_wav(path)?;
    Ok(if rate == SAMPLE_RATE { x } else { resample_linear(&x, rate, SAMPLE_RATE) })
}

/// Linear-interpolation resampler. Adequate for ingesting speech corpora
/// already band-limited below the target Nyquist rate.
pub fn resample_linear(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if x.is_empty() || from == to {
        return x.to_vec();
    }
    let ratio = from as f64 / to as f64;
    let out_len = ((x.len() as f64) / ratio).floor().max(1.0) as usize;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = x[j.min(x.len() - 1)];
            let b = x[(j + 1).min(x.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

/// Writes 32-bit float mono WAV at [`SAMPLE_RATE`].
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 32, sample_format: SampleFormat::Float };
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in samples {
        w.write_sample(s as f32).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

/// Writes 16-bit PCM mono WAV at [`SAMPLE_RATE`], clipping to `[-1, 1]`.
pub fn write_wav_pcm16(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin() * 0.7).collect();
        write_wav(&p, &x).unwrap();
        let (y, rate) = read_wav(&p).unwrap();
        assert_eq!(rate, SAMPLE_RATE);
        for (a, b) in x.iter().zip(&y) {
            assert_eq!(*a as f32 as f64, *b);
        }
    }

    #[test]
    fn pcm16_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let x: Vec<f64> = (0..64).map(|i| (i as f64 / 64.0) - 0.5).collect();
        write_wav_pcm16(&p, &x).unwrap();
        let y = read_mono(&p).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1.0 / 32768.0 + 1e-12));
    }

    #[test]
    fn resampling_halves_length() {
        let x: Vec<f64> = (0..32000).map(|i| i as f64).collect();
        let y = resample_linear(&x, 32000, 16000);
        assert_eq!(y.len(), 16000);
        assert_eq!(y[10], 20.0);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(read_wav(Path::new("/nonexistent/x.wav")).is_err());
    }
}
