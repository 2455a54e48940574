//! Synthetic convolutive scene generation.
//!
//! Sources, interferers, and sensor noise are mixed through synthetic room
//! impulse responses (a random integer delay, a unit leading tap, and an
//! exponentially decaying random tail) to the microphones and to the blinky
//! positions. Source, interferer, and noise variances are calibrated so the
//! scene hits the requested SNR and SINR exactly:
//!
//! `SNR = mean_k(sigma_k^2) / sigma_n^2`,
//! `SINR = sum_k(sigma_k^2) / (Q sigma_i^2 + sigma_n^2)`.

use ndarray::Array2;
use num_complex::Complex64;
use rand::RngExt;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::stft::{analyze, TimeSignal};

/// Standard deviation of the random RIR tail relative to the unit leading
/// tap, before the decay envelope.
pub const RIR_TAIL_STD: f64 = 0.25;

/// Largest random direct-path delay drawn by [`mix`], in samples.
pub const MAX_RIR_DELAY: usize = 50;

/// Mixing specification for one synthetic scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_sources: usize,
    pub n_mics: usize,
    pub n_blinkies: usize,
    #[serde(default = "default_interferers")]
    pub n_interferers: usize,
    /// Target source variances, one per source.
    #[serde(rename = "variances")]
    pub source_variances: Vec<f64>,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default = "default_sinr")]
    pub sinr_db: f64,
    #[serde(default = "default_rir_length")]
    pub rir_length: usize,
    #[serde(default = "default_rir_decay")]
    pub rir_decay_ms: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
}

fn default_interferers() -> usize {
    10
}
fn default_snr() -> f64 {
    60.0
}
fn default_sinr() -> f64 {
    10.0
}
fn default_rir_length() -> usize {
    2048
}
fn default_rir_decay() -> f64 {
    150.0
}
fn default_duration() -> f64 {
    20.0
}

/// The default variance profile: a weak first source at 0.25, the rest at 1.
pub fn default_variances(n_sources: usize) -> Vec<f64> {
    (0..n_sources)
        .map(|k| if k == 0 { 0.25 } else { 1.0 })
        .collect()
}

impl SceneConfig {
    pub fn new(n_sources: usize, n_mics: usize, n_blinkies: usize) -> Self {
        SceneConfig {
            n_sources,
            n_mics,
            n_blinkies,
            n_interferers: default_interferers(),
            source_variances: default_variances(n_sources),
            snr_db: default_snr(),
            sinr_db: default_sinr(),
            rir_length: default_rir_length(),
            rir_decay_ms: default_rir_decay(),
            seed: 0,
            duration_s: default_duration(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 || self.n_sources > self.n_mics {
            return Err(BssError::InvalidConfig(format!(
                "need 1 <= n_sources <= n_mics, got {} sources and {} mics",
                self.n_sources, self.n_mics
            )));
        }
        if self.n_blinkies == 0 {
            return Err(BssError::InvalidConfig("need at least one blinky".into()));
        }
        if self.source_variances.len() != self.n_sources {
            return Err(BssError::InvalidConfig(format!(
                "{} variances for {} sources",
                self.source_variances.len(),
                self.n_sources
            )));
        }
        if self.source_variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(BssError::InvalidConfig(
                "source variances must be positive".into(),
            ));
        }
        if !(self.duration_s > 0.0) {
            return Err(BssError::InvalidConfig("duration must be positive".into()));
        }
        if !(self.rir_decay_ms > 0.0) {
            return Err(BssError::InvalidConfig(
                "non-positive decay".into(),
            ));
        }
        if self.rir_length == 0 {
            return Err(BssError::InvalidConfig("rir_length must be >= 1".into()));
        }
        Ok(())
    }

    /// Noise variance solving the SNR definition.
    pub fn noise_variance(&self) -> f64 {
        let mean: f64 =
            self.source_variances.iter().sum::<f64>() / self.n_sources as f64;
        mean / 10f64.powf(self.snr_db / 10.0)
    }

    /// Per-interferer variance solving the SINR definition, `None` when the
    /// scene has no interference (Q = 0 or infinite SINR).
    pub fn interferer_variance(&self) -> Result<Option<f64>> {
        if self.n_interferers == 0 || self.sinr_db.is_infinite() {
            return Ok(None);
        }
        let total: f64 = self.source_variances.iter().sum();
        let sigma_i2 = (total / 10f64.powf(self.sinr_db / 10.0) - self.noise_variance())
            / self.n_interferers as f64;
        if !(sigma_i2 > 0.0) {
            return Err(BssError::InfeasibleSinr { sigma_i2 });
        }
        Ok(Some(sigma_i2))
    }
}

/// Calibrated component variances of a generated scene, measured on the
/// actual scaled signals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub source_variances: Vec<f64>,
    pub interferer_variance: f64,
    pub noise_variance: f64,
    pub n_interferers: usize,
}

impl Calibration {
    pub fn snr_db(&self) -> f64 {
        let mean: f64 =
            self.source_variances.iter().sum::<f64>() / self.source_variances.len() as f64;
        10.0 * (mean / self.noise_variance).log10()
    }

    pub fn sinr_db(&self) -> f64 {
        let total: f64 = self.source_variances.iter().sum();
        let denom =
            self.n_interferers as f64 * self.interferer_variance + self.noise_variance;
        10.0 * (total / denom).log10()
    }
}

/// A generated convolutive scene.
#[derive(Debug, Clone)]
pub struct Scene {
    /// Per-source images at the microphones, each `(n_mics, n_samples)`.
    pub premix_images: Vec<Array2<f64>>,
    /// The mixture at the microphones: images + interference + noise.
    pub mic_signals: TimeSignal,
    /// The mixture at the blinky positions (simulated as extra microphones).
    pub blinky_mics: TimeSignal,
    /// Clean targets for evaluation: each source's image at microphone 0.
    pub references: TimeSignal,
    pub calibration: Calibration,
}

/// Synthetic room impulse response: a unit tap at `delay` followed by
/// zero-mean random taps under the envelope `exp(-t / tau)`, where `tau` is
/// set so the envelope reaches -60 dB after `decay_ms` milliseconds.
pub fn generate_rir(
    decay_ms: f64,
    length: usize,
    delay: usize,
    sample_rate: u32,
    rng: &mut impl RngExt,
) -> Result<Vec<f64>> {
    if !(decay_ms > 0.0) {
        return Err(BssError::InvalidConfig("non-positive decay".into()));
    }
    if delay >= length {
        return Err(BssError::InvalidConfig(format!(
            "delay {delay} must be smaller than rir length {length}"
        )));
    }
    let tau = decay_ms / 1000.0 * sample_rate as f64 / 1000f64.ln();
    let mut taps = vec![0.0f64; length];
    taps[delay] = 1.0;
    for t in delay + 1..length {
        let envelope = (-((t - delay) as f64) / tau).exp();
        taps[t] = RIR_TAIL_STD * randn(rng) * envelope;
    }
    Ok(taps)
}

/// Speech-shaped noise: lowpassed white noise with a slowly varying
/// log-normal envelope emulating syllabic level fluctuations.
pub fn speech_shaped_noise(
    n_samples: usize,
    sample_rate: u32,
    rng: &mut impl RngExt,
) -> Vec<f64> {
    let mut out = vec![0.0f64; n_samples];
    let mut state = 0.0f64;
    for v in out.iter_mut() {
        state = 0.93 * state + 0.07 * randn(rng);
        *v = state;
    }
    // envelope knots every 250 ms, linearly interpolated in the log domain;
    // a two-state gate inserts utterance-scale pauses (roughly 50 dB down
    // in power) between active stretches
    let knot_len = (sample_rate as usize / 4).max(1);
    let n_knots = n_samples / knot_len + 2;
    let mut speaking = true;
    let knots: Vec<f64> = (0..n_knots)
        .map(|_| {
            let stay: f64 = rng.random();
            if speaking && stay > 0.85 {
                speaking = false;
            } else if !speaking && stay > 0.5 {
                speaking = true;
            }
            let level = 0.8 * randn(rng);
            if speaking {
                level
            } else {
                level - 3.0
            }
        })
        .collect();
    for (t, v) in out.iter_mut().enumerate() {
        let pos = t as f64 / knot_len as f64;
        let idx = pos as usize;
        let frac = pos - idx as f64;
        let log_env = knots[idx] * (1.0 - frac) + knots[idx + 1] * frac;
        *v *= log_env.exp();
    }
    let mean = out.iter().sum::<f64>() / n_samples.max(1) as f64;
    for v in out.iter_mut() {
        *v -= mean;
    }
    out
}

fn randn(rng: &mut impl RngExt) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn variance(samples: &[f64]) -> f64 {
    samples.iter().map(|v| v * v).sum::<f64>() / samples.len().max(1) as f64
}

/// Scale to an exact empirical variance.
fn scale_to_variance(samples: &mut [f64], target: f64, what: &str) -> Result<()> {
    let var = variance(samples);
    if !(var > 0.0) {
        return Err(BssError::InvalidConfig(format!("{what} has zero energy")));
    }
    let scale = (target / var).sqrt();
    for v in samples.iter_mut() {
        *v *= scale;
    }
    Ok(())
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// FFT-domain convolution against one cached signal spectrum.
struct CachedSignal {
    spectrum: Vec<Complex64>,
    n_fft: usize,
}

impl CachedSignal {
    fn new(signal: &[f64], max_filter_len: usize, planner: &mut FftPlanner<f64>) -> Self {
        let n_fft = next_pow2(signal.len() + max_filter_len);
        let mut spectrum = vec![Complex64::default(); n_fft];
        for (buf, &v) in spectrum.iter_mut().zip(signal.iter()) {
            *buf = Complex64::new(v, 0.0);
        }
        planner.plan_fft_forward(n_fft).process(&mut spectrum);
        CachedSignal { spectrum, n_fft }
    }

    fn convolve(
        &self,
        filter: &[f64],
        out_len: usize,
        planner: &mut FftPlanner<f64>,
    ) -> Vec<f64> {
        let mut buf = vec![Complex64::default(); self.n_fft];
        for (b, &v) in buf.iter_mut().zip(filter.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        planner.plan_fft_forward(self.n_fft).process(&mut buf);
        for (b, s) in buf.iter_mut().zip(self.spectrum.iter()) {
            *b *= s;
        }
        planner.plan_fft_inverse(self.n_fft).process(&mut buf);
        let norm = 1.0 / self.n_fft as f64;
        buf.iter().take(out_len).map(|v| v.re * norm).collect()
    }
}

fn add_into(dst: &mut Array2<f64>, row: usize, src: &[f64]) {
    for (d, &s) in dst.row_mut(row).iter_mut().zip(src.iter()) {
        *d += s;
    }
}

/// A unit-energy RIR to a microphone. The array is compact: all mics share
/// the source's base delay up to a few samples of jitter, so the direct
/// paths are nearly identical and channel diversity comes from the tails.
fn mic_rir(
    cfg: &SceneConfig,
    base_delay: usize,
    fs: u32,
    rng: &mut impl RngExt,
) -> Result<Vec<f64>> {
    let jitter = rng.random_range(0..=3usize);
    let delay = (base_delay + jitter).min(cfg.rir_length - 1);
    let mut rir = generate_rir(cfg.rir_decay_ms, cfg.rir_length, delay, fs, rng)?;
    let energy = rir.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in rir.iter_mut() {
        *v /= energy;
    }
    Ok(rir)
}

/// Base direct-path delay for one source, leaving room for the mic jitter.
fn source_base_delay(cfg: &SceneConfig, rng: &mut impl RngExt) -> usize {
    rng.random_range(0..=(MAX_RIR_DELAY - 3).min(cfg.rir_length.saturating_sub(4)))
}

/// A blinky RIR: unit energy scaled by `gain_db`, with a wider decay spread
/// than the microphone RIRs.
fn blinky_rir(
    cfg: &SceneConfig,
    gain_db: f64,
    fs: u32,
    rng: &mut impl RngExt,
) -> Result<Vec<f64>> {
    let decay = cfg.rir_decay_ms * (0.75 + rng.random::<f64>());
    let delay = rng.random_range(0..=MAX_RIR_DELAY.min(cfg.rir_length - 1));
    let mut rir = generate_rir(decay, cfg.rir_length, delay, fs, rng)?;
    let energy = rir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let gain = 10f64.powf(gain_db / 20.0) / energy;
    for v in rir.iter_mut() {
        *v *= gain;
    }
    Ok(rir)
}

/// Power gain from source `k` to blinky `b`, standing in for the distance
/// attenuation of sensors spread over the covered area: blinky `b` sits
/// near source `b mod K` and hears the others 6 to 18 dB down.
fn blinky_source_gain_db(b: usize, k: usize, n_sources: usize, rng: &mut impl RngExt) -> f64 {
    if b % n_sources == k {
        -3.0 * rng.random::<f64>()
    } else {
        -6.0 - 12.0 * rng.random::<f64>()
    }
}

/// Power gain from a diffuse interferer to any blinky: interference comes
/// from outside the covered area and arrives attenuated.
fn blinky_interferer_gain_db(rng: &mut impl RngExt) -> f64 {
    -8.0 - 10.0 * rng.random::<f64>()
}

/// Generate a convolutive scene from `n_sources` source recordings.
///
/// Sources are trimmed to the configured duration and scaled to their exact
/// target variances before propagation; interferers (speech-shaped noise)
/// and per-channel white noise are calibrated the same way, so the scene
/// realizes the configured SNR and SINR exactly.
pub fn mix(config: &SceneConfig, sources: &TimeSignal, rng: &mut impl RngExt) -> Result<Scene> {
    config.validate()?;
    let fs = sources.sample_rate;
    let n_samples = (config.duration_s * fs as f64).round() as usize;
    if sources.n_channels() != config.n_sources {
        return Err(BssError::ShapeMismatch(format!(
            "{} source channels for n_sources = {}",
            sources.n_channels(),
            config.n_sources
        )));
    }
    if sources.n_samples() < n_samples {
        return Err(BssError::SignalTooShort {
            got: sources.n_samples(),
            need: n_samples,
        });
    }
    let sigma_n2 = config.noise_variance();
    let sigma_i2 = config.interferer_variance()?;

    let (n_mics, n_blinkies) = (config.n_mics, config.n_blinkies);
    let mut planner = FftPlanner::<f64>::new();
    let mut mics = Array2::<f64>::zeros((n_mics, n_samples));
    let mut blinkies = Array2::<f64>::zeros((n_blinkies, n_samples));
    let mut premix_images = Vec::with_capacity(config.n_sources);
    let mut measured_sources = Vec::with_capacity(config.n_sources);

    for k in 0..config.n_sources {
        let mut dry: Vec<f64> = sources.channel(k).iter().take(n_samples).copied().collect();
        scale_to_variance(&mut dry, config.source_variances[k], &format!("source {k}"))?;
        measured_sources.push(variance(&dry));
        let cached = CachedSignal::new(&dry, config.rir_length, &mut planner);

        let mut image = Array2::<f64>::zeros((n_mics, n_samples));
        let base_delay = source_base_delay(config, rng);
        for m in 0..n_mics {
            let rir = mic_rir(config, base_delay, fs, rng)?;
            let conv = cached.convolve(&rir, n_samples, &mut planner);
            add_into(&mut image, m, &conv);
        }
        for b in 0..n_blinkies {
            let gain_db = blinky_source_gain_db(b, k, config.n_sources, rng);
            let rir = blinky_rir(config, gain_db, fs, rng)?;
            let conv = cached.convolve(&rir, n_samples, &mut planner);
            add_into(&mut blinkies, b, &conv);
        }
        for m in 0..n_mics {
            for t in 0..n_samples {
                mics[[m, t]] += image[[m, t]];
            }
        }
        premix_images.push(image);
    }

    let mut measured_i2 = 0.0;
    if let Some(sigma_i2) = sigma_i2 {
        for q in 0..config.n_interferers {
            let mut dry = speech_shaped_noise(n_samples, fs, rng);
            scale_to_variance(&mut dry, sigma_i2, &format!("interferer {q}"))?;
            measured_i2 += variance(&dry);
            let cached = CachedSignal::new(&dry, config.rir_length, &mut planner);
            let base_delay = source_base_delay(config, rng);
            for m in 0..n_mics {
                let rir = mic_rir(config, base_delay, fs, rng)?;
                let conv = cached.convolve(&rir, n_samples, &mut planner);
                add_into(&mut mics, m, &conv);
            }
            for b in 0..n_blinkies {
                let rir = blinky_rir(config, blinky_interferer_gain_db(rng), fs, rng)?;
                let conv = cached.convolve(&rir, n_samples, &mut planner);
                add_into(&mut blinkies, b, &conv);
            }
        }
        measured_i2 /= config.n_interferers as f64;
    }

    let mut measured_n2 = 0.0;
    let n_noise_channels = n_mics + n_blinkies;
    for ch in 0..n_noise_channels {
        let mut noise: Vec<f64> = (0..n_samples).map(|_| randn(rng)).collect();
        scale_to_variance(&mut noise, sigma_n2, "noise")?;
        measured_n2 += variance(&noise);
        if ch < n_mics {
            add_into(&mut mics, ch, &noise);
        } else {
            add_into(&mut blinkies, ch - n_mics, &noise);
        }
    }
    measured_n2 /= n_noise_channels as f64;

    let mut references = Array2::<f64>::zeros((config.n_sources, n_samples));
    for k in 0..config.n_sources {
        for t in 0..n_samples {
            references[[k, t]] = premix_images[k][[0, t]];
        }
    }

    Ok(Scene {
        premix_images,
        mic_signals: TimeSignal::new(mics, fs)?,
        blinky_mics: TimeSignal::new(blinkies, fs)?,
        references: TimeSignal::new(references, fs)?,
        calibration: Calibration {
            source_variances: measured_sources,
            interferer_variance: measured_i2,
            noise_variance: measured_n2,
            n_interferers: if sigma_i2.is_some() {
                config.n_interferers
            } else {
                0
            },
        },
    })
}

/// Blinky power signals: per frame, the sound power summed over frequencies,
/// `u_bn = sum_f |X_b[f, n]|^2`. Returns a `B x N` matrix.
pub fn blinky_signals(
    blinky_mics: &TimeSignal,
    frame_size: usize,
    hop: usize,
) -> Result<Array2<f64>> {
    let spec = analyze(blinky_mics, frame_size, hop)?;
    Ok(spec.frame_power())
}
