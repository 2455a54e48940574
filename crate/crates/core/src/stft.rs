//! Analysis/synthesis short-time Fourier transform.
//!
//! Both analysis and synthesis use a square-root Hann window with half
//! overlap, so the window product sums to one across overlapping frames
//! and interior samples reconstruct exactly.
//!
//! Normalization convention: the one-sided spectrum is scaled by
//! `1/sqrt(frame_size)` with an extra `sqrt(2)` on the interior bins
//! (everything except DC and Nyquist). Under this convention the summed
//! squared magnitudes over the bins of one frame equal the windowed
//! time-domain frame energy exactly, i.e. the Parseval constant is 1
//! ([`PARSEVAL_CONSTANT`]) and is identical for every frame.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{BssError, Result};

/// Ratio of per-frame spectral power `sum_f |X[f,n,m]|^2` to windowed
/// time-domain frame energy under this module's scaling convention.
pub const PARSEVAL_CONSTANT: f64 = 1.0;

/// A real multichannel signal, one row per channel.
#[derive(Debug, Clone)]
pub struct TimeSignal {
    /// Shape `(n_channels, n_samples)`.
    pub data: Array2<f64>,
    /// Sample rate in Hz.
    pub sample_rate: u32,
}

impl TimeSignal {
    pub fn new(data: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(BssError::InvalidConfig("sample_rate must be > 0".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(BssError::Numerical("non-finite sample value".into()));
        }
        Ok(TimeSignal { data, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        let data = Array2::from_shape_vec((1, n), samples)
            .map_err(|e| BssError::ShapeMismatch(e.to_string()))?;
        TimeSignal::new(data, sample_rate)
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn channel(&self, m: usize) -> ndarray::ArrayView1<'_, f64> {
        self.data.row(m)
    }
}

/// Complex STFT tensor indexed `[bin, frame, channel]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// Shape `(n_bins, n_frames, n_channels)` with `n_bins = frame_size/2 + 1`.
    pub data: Array3<Complex64>,
    pub frame_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_channels(&self) -> usize {
        self.data.shape()[2]
    }

    /// Per-channel per-frame power `P[m, n] = sum_f |X[f,n,m]|^2`.
    pub fn frame_power(&self) -> Array2<f64> {
        let (n_bins, n_frames, n_ch) = (self.n_bins(), self.n_frames(), self.n_channels());
        let mut p = Array2::<f64>::zeros((n_ch, n_frames));
        for f in 0..n_bins {
            for n in 0..n_frames {
                for m in 0..n_ch {
                    p[[m, n]] += self.data[[f, n, m]].norm_sqr();
                }
            }
        }
        p
    }

    /// Copy of the selected channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Spectrogram {
        let (n_bins, n_frames) = (self.n_bins(), self.n_frames());
        let mut data = Array3::<Complex64>::zeros((n_bins, n_frames, channels.len()));
        for (out_m, &m) in channels.iter().enumerate() {
            for f in 0..n_bins {
                for n in 0..n_frames {
                    data[[f, n, out_m]] = self.data[[f, n, m]];
                }
            }
        }
        Spectrogram {
            data,
            frame_size: self.frame_size,
            hop: self.hop,
            sample_rate: self.sample_rate,
        }
    }
}

/// Square-root Hann window of the given (even) length: `sin(pi t / L)`.
pub fn sqrt_hann(frame_size: usize) -> Vec<f64> {
    (0..frame_size)
        .map(|t| (std::f64::consts::PI * t as f64 / frame_size as f64).sin())
        .collect()
}

fn check_geometry(frame_size: usize, hop: usize) -> Result<()> {
    if frame_size < 2 || frame_size % 2 != 0 {
        return Err(BssError::BadGeometry(format!(
            "frame_size must be even and >= 2, got {frame_size}"
        )));
    }
    if hop != frame_size / 2 {
        return Err(BssError::BadGeometry(format!(
            "hop must equal frame_size/2 (half overlap), got hop={hop}, frame_size={frame_size}"
        )));
    }
    Ok(())
}

/// Forward STFT of a multichannel signal.
///
/// Frames are taken every `hop` samples after zero-padding `hop` samples at
/// both ends, giving `n_frames = ceil(n_samples / hop)`. Reconstruction
/// guarantees exclude the padded edges.
pub fn analyze(signal: &TimeSignal, frame_size: usize, hop: usize) -> Result<Spectrogram> {
    check_geometry(frame_size, hop)?;
    let n_samples = signal.n_samples();
    if n_samples < frame_size {
        return Err(BssError::SignalTooShort {
            got: n_samples,
            need: frame_size,
        });
    }
    let n_ch = signal.n_channels();
    let n_frames = n_samples.div_ceil(hop);
    let n_bins = frame_size / 2 + 1;
    let padded_len = (n_frames - 1) * hop + frame_size;

    let window = sqrt_hann(frame_size);
    let inv_sqrt_len = 1.0 / (frame_size as f64).sqrt();
    let sqrt2 = std::f64::consts::SQRT_2;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_size);

    let mut out = Array3::<Complex64>::zeros((n_bins, n_frames, n_ch));
    let mut padded = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::default(); frame_size];

    for m in 0..n_ch {
        padded.iter_mut().for_each(|v| *v = 0.0);
        for (t, &v) in signal.channel(m).iter().enumerate() {
            padded[hop + t] = v;
        }
        for n in 0..n_frames {
            let start = n * hop;
            for t in 0..frame_size {
                buf[t] = Complex64::new(padded[start + t] * window[t], 0.0);
            }
            fft.process(&mut buf);
            for f in 0..n_bins {
                let scale = if f == 0 || f == frame_size / 2 {
                    inv_sqrt_len
                } else {
                    inv_sqrt_len * sqrt2
                };
                out[[f, n, m]] = buf[f] * scale;
            }
        }
    }

    Ok(Spectrogram {
        data: out,
        frame_size,
        hop,
        sample_rate: signal.sample_rate,
    })
}

/// Inverse STFT by windowed overlap-add.
///
/// Returns `n_frames * hop` samples per channel; for a spectrogram produced
/// by [`analyze`], interior samples match the input to numerical precision.
pub fn synthesize(spec: &Spectrogram) -> Result<TimeSignal> {
    check_geometry(spec.frame_size, spec.hop)?;
    let frame_size = spec.frame_size;
    let hop = spec.hop;
    let n_bins = spec.n_bins();
    if n_bins != frame_size / 2 + 1 {
        return Err(BssError::BadGeometry(format!(
            "expected {} bins for frame_size {}, got {}",
            frame_size / 2 + 1,
            frame_size,
            n_bins
        )));
    }
    let n_frames = spec.n_frames();
    let n_ch = spec.n_channels();
    let padded_len = (n_frames - 1) * hop + frame_size;

    let window = sqrt_hann(frame_size);
    let sqrt_len = (frame_size as f64).sqrt();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(frame_size);

    let mut out = Array2::<f64>::zeros((n_ch, n_frames * hop));
    let mut padded = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::default(); frame_size];

    for m in 0..n_ch {
        padded.iter_mut().for_each(|v| *v = 0.0);
        for n in 0..n_frames {
            for f in 0..n_bins {
                let scale = if f == 0 || f == frame_size / 2 {
                    sqrt_len
                } else {
                    sqrt_len * inv_sqrt2
                };
                buf[f] = spec.data[[f, n, m]] * scale;
            }
            // Hermitian mirror for the negative frequencies
            for f in 1..frame_size / 2 {
                buf[frame_size - f] = buf[f].conj();
            }
            ifft.process(&mut buf);
            let start = n * hop;
            let norm = 1.0 / frame_size as f64;
            for t in 0..frame_size {
                padded[start + t] += buf[t].re * norm * window[t];
            }
        }
        for t in 0..n_frames * hop {
            out[[m, t]] = padded[hop + t];
        }
    }

    TimeSignal::new(out, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_signal(n_ch: usize, n_samples: usize, seed: u64) -> TimeSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((n_ch, n_samples), |_| rng.random::<f64>() * 2.0 - 1.0);
        TimeSignal::new(data, 16_000).unwrap()
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let sig = TimeSignal::mono(vec![0.0; 4096], 16_000).unwrap();
        let spec = analyze(&sig, 1024, 512).unwrap();
        assert!(spec.data.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn too_short_signal_is_rejected() {
        let sig = TimeSignal::mono(vec![1.0; 100], 16_000).unwrap();
        match analyze(&sig, 512, 256) {
            Err(BssError::SignalTooShort { got: 100, need: 512 }) => {}
            other => panic!("expected SignalTooShort, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_hop_is_rejected() {
        let sig = random_signal(1, 2048, 1);
        assert!(analyze(&sig, 512, 128).is_err());
    }

    /// Oracle: a direct windowed DFT of each padded frame.
    fn direct_frame_dft(frame: &[f64], window: &[f64], f: usize) -> Complex64 {
        let len = frame.len() as f64;
        let mut acc = Complex64::default();
        for (t, (&x, &w)) in frame.iter().zip(window.iter()).enumerate() {
            let phase = -2.0 * std::f64::consts::PI * f as f64 * t as f64 / len;
            acc += Complex64::from_polar(x * w, phase);
        }
        acc
    }

    #[test]
    fn sinusoid_matches_direct_dft_oracle_and_concentrates() {
        let frame_size = 256;
        let hop = 128;
        let bin = 64; // quarter rate keeps the negative-frequency image far away
        let n = 2048;
        let freq = bin as f64 / frame_size as f64;
        let samples: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * freq * t as f64).cos())
            .collect();
        let sig = TimeSignal::mono(samples.clone(), 16_000).unwrap();
        let spec = analyze(&sig, frame_size, hop).unwrap();

        // oracle comparison on an interior frame
        let window = sqrt_hann(frame_size);
        let frame_idx = 5;
        let start = frame_idx * hop; // padded index; padding is `hop` zeros
        let mut frame = vec![0.0f64; frame_size];
        for t in 0..frame_size {
            let src = (start + t) as isize - hop as isize;
            if src >= 0 && (src as usize) < n {
                frame[t] = samples[src as usize];
            }
        }
        let inv_sqrt_len = 1.0 / (frame_size as f64).sqrt();
        for f in 0..spec.n_bins() {
            let scale = if f == 0 || f == frame_size / 2 {
                inv_sqrt_len
            } else {
                inv_sqrt_len * std::f64::consts::SQRT_2
            };
            let oracle = direct_frame_dft(&frame, &window, f) * scale;
            let got = spec.data[[f, frame_idx, 0]];
            assert!(
                (got - oracle).norm() < 1e-10,
                "bin {f}: {got} vs oracle {oracle}"
            );
        }

        // energy concentration: bins far from the tone are below -60 dB of
        // the peak; the sqrt-Hann sidelobe tail covers roughly 20 bins
        let peak = spec.data[[bin, frame_idx, 0]].norm();
        for f in 0..spec.n_bins() {
            if (f as isize - bin as isize).unsigned_abs() >= 20 {
                let rel = spec.data[[f, frame_idx, 0]].norm() / peak;
                assert!(
                    rel < 1e-3,
                    "bin {f} leaks {:.1} dB",
                    20.0 * rel.log10()
                );
            }
        }
    }

    #[test]
    fn multichannel_analyze_matches_per_channel() {
        let sig = random_signal(3, 4000, 7);
        let spec = analyze(&sig, 512, 256).unwrap();
        for m in 0..3 {
            let mono = TimeSignal::mono(sig.channel(m).to_vec(), 16_000).unwrap();
            let mono_spec = analyze(&mono, 512, 256).unwrap();
            for f in 0..spec.n_bins() {
                for n in 0..spec.n_frames() {
                    assert_eq!(spec.data[[f, n, m]], mono_spec.data[[f, n, 0]]);
                }
            }
        }
    }

    #[test]
    fn round_trip_interior_error_below_1e10() {
        for &frame_size in &[512usize, 1024, 4096] {
            let hop = frame_size / 2;
            let sig = random_signal(2, 16_000, 42);
            let spec = analyze(&sig, frame_size, hop).unwrap();
            let rec = synthesize(&spec).unwrap();
            let mut max_err = 0.0f64;
            for m in 0..2 {
                for t in frame_size..sig.n_samples() - frame_size {
                    max_err = max_err.max((rec.data[[m, t]] - sig.data[[m, t]]).abs());
                }
            }
            assert!(max_err <= 1e-10, "frame {frame_size}: err {max_err:e}");
        }
    }

    #[test]
    fn all_zero_spectrogram_synthesizes_to_zero() {
        let spec = Spectrogram {
            data: Array3::zeros((257, 8, 1)),
            frame_size: 512,
            hop: 256,
            sample_rate: 16_000,
        };
        let sig = synthesize(&spec).unwrap();
        assert!(sig.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_bin_count_is_rejected() {
        let spec = Spectrogram {
            data: Array3::zeros((100, 8, 1)),
            frame_size: 512,
            hop: 256,
            sample_rate: 16_000,
        };
        assert!(synthesize(&spec).is_err());
    }

    #[test]
    fn parseval_constant_identical_across_frames() {
        let frame_size = 512;
        let hop = 256;
        let sig = random_signal(1, 8000, 3);
        let spec = analyze(&sig, frame_size, hop).unwrap();
        let window = sqrt_hann(frame_size);

        let mut padded = vec![0.0f64; (spec.n_frames() - 1) * hop + frame_size];
        for (t, &v) in sig.channel(0).iter().enumerate() {
            padded[hop + t] = v;
        }
        for n in 0..spec.n_frames() {
            let spectral: f64 = (0..spec.n_bins())
                .map(|f| spec.data[[f, n, 0]].norm_sqr())
                .sum();
            let temporal: f64 = (0..frame_size)
                .map(|t| (padded[n * hop + t] * window[t]).powi(2))
                .sum();
            if temporal > 0.0 {
                assert!(
                    (spectral / temporal - PARSEVAL_CONSTANT).abs() < 1e-10,
                    "frame {n}: ratio {}",
                    spectral / temporal
                );
            }
        }
    }

    #[test]
    fn analyze_is_linear() {
        let x = random_signal(1, 4000, 11);
        let y = random_signal(1, 4000, 12);
        let (a, b) = (0.7, -1.3);
        let mixed = TimeSignal::new(&x.data * a + &y.data * b, 16_000).unwrap();
        let sx = analyze(&x, 512, 256).unwrap();
        let sy = analyze(&y, 512, 256).unwrap();
        let sm = analyze(&mixed, 512, 256).unwrap();
        for f in 0..sm.n_bins() {
            for n in 0..sm.n_frames() {
                let expect = sx.data[[f, n, 0]] * a + sy.data[[f, n, 0]] * b;
                assert!((sm.data[[f, n, 0]] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn long_round_trip_preserves_interior_energy() {
        // 20 s speech-like noise: lowpassed white noise with an envelope
        let n = 320_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples = vec![0.0f64; n];
        let mut state = 0.0;
        for t in 0..n {
            let white = rng.random::<f64>() * 2.0 - 1.0;
            state = 0.9 * state + 0.1 * white;
            let env = 1.0 + 0.8 * (2.0 * std::f64::consts::PI * 4.0 * t as f64 / 16_000.0).sin();
            samples[t] = state * env;
        }
        let sig = TimeSignal::mono(samples, 16_000).unwrap();
        let spec = analyze(&sig, 4096, 2048).unwrap();
        let rec = synthesize(&spec).unwrap();
        let (mut e_in, mut e_out) = (0.0f64, 0.0f64);
        for t in 4096..n - 4096 {
            e_in += sig.data[[0, t]].powi(2);
            e_out += rec.data[[0, t]].powi(2);
        }
        assert!((e_out / e_in - 1.0).abs() < 1e-9);
    }
}
