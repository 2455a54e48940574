//! WAV file I/O: 16-bit integer and 32-bit float PCM, multichannel
//! interleaved. No resampling is performed; a configured rate mismatch is
//! an error.

use std::path::Path;

use blinky_bss::TimeSignal;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::error::{CliError, Result};

/// Read a WAV file into one row per channel. 16-bit samples are scaled to
/// [-1, 1); float samples pass through unchanged.
pub fn read_wav(path: &Path, expected_rate: Option<u32>) -> Result<TimeSignal> {
    let mut reader = WavReader::open(path).map_err(|e| CliError::io(path, e))?;
    let spec = reader.spec();
    if let Some(rate) = expected_rate {
        if spec.sample_rate != rate {
            return Err(CliError::Config(format!(
                "{}: sample rate mismatch: file has {} Hz, configured {} Hz",
                path.display(),
                spec.sample_rate,
                rate
            )));
        }
    }
    let n_ch = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::io(path, e))?,
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::io(path, e))?,
        (format, bits) => {
            return Err(CliError::Config(format!(
                "{}: unsupported WAV format {format:?} at {bits} bits; use 16-bit or float PCM",
                path.display()
            )));
        }
    };
    let n_samples = interleaved.len() / n_ch;
    let mut data = Array2::<f64>::zeros((n_ch, n_samples));
    for t in 0..n_samples {
        for ch in 0..n_ch {
            data[[ch, t]] = interleaved[t * n_ch + ch];
        }
    }
    TimeSignal::new(data, spec.sample_rate).map_err(CliError::from)
}

/// Write a signal as 32-bit float PCM.
pub fn write_wav(path: &Path, signal: &TimeSignal) -> Result<()> {
    let spec = WavSpec {
        channels: signal.n_channels() as u16,
        sample_rate: signal.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| CliError::io(path, e))?;
    for t in 0..signal.n_samples() {
        for ch in 0..signal.n_channels() {
            writer
                .write_sample(signal.data[[ch, t]] as f32)
                .map_err(|e| CliError::io(path, e))?;
        }
    }
    writer.finalize().map_err(|e| CliError::io(path, e))?;
    Ok(())
}
