//! SDR / SIR evaluation with permutation resolution.
//!
//! Each estimate is decomposed into `s_target + e_interf + e_artif`:
//! `s_target` is the least-squares projection of the estimate onto delayed
//! copies (up to `filter_len` taps) of its paired reference, `e_interf`
//! extends the projection to the span of all references, and `e_artif` is
//! the remainder. Then
//!
//! `SDR = 10 log10(||s_target||^2 / ||e_interf + e_artif||^2)` and
//! `SIR = 10 log10(||s_target||^2 / ||e_interf||^2)`,
//!
//! evaluated globally over the whole signal. All pairings are scored and
//! the permutation with the largest mean SIR is reported. dB values are
//! capped at +/-100.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::stft::TimeSignal;

/// Default distortion filter length in taps.
pub const DEFAULT_FILTER_LEN: usize = 512;

/// Diagonal regularization added to the projection Gram matrix, as a
/// fraction of its trace.
pub const GRAM_REG_REL: f64 = 1e-10;

const DB_CAP: f64 = 100.0;

/// Evaluation result for one set of estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per estimate `j`, the SDR against reference `permutation[j]`.
    pub sdr_db: Vec<f64>,
    /// Per estimate `j`, the SIR against reference `permutation[j]`.
    pub sir_db: Vec<f64>,
    /// Estimate -> reference assignment maximizing the mean SIR.
    pub permutation: Vec<usize>,
    /// Reference index flagged as the weak source, when known.
    pub weak_source: Option<usize>,
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        return -DB_CAP;
    }
    if den <= 0.0 {
        return DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

/// Dense symmetric positive definite solver (lower Cholesky factor).
struct Cholesky {
    factor: Vec<f64>,
    dim: usize,
}

impl Cholesky {
    fn new(mut a: Vec<f64>, dim: usize) -> Result<Self> {
        for j in 0..dim {
            let mut diag = a[j * dim + j];
            for k in 0..j {
                diag -= a[j * dim + k] * a[j * dim + k];
            }
            if !(diag > 0.0) {
                return Err(BssError::Numerical(format!(
                    "projection Gram matrix not positive definite at pivot {j}"
                )));
            }
            let diag = diag.sqrt();
            a[j * dim + j] = diag;
            for i in j + 1..dim {
                let mut v = a[i * dim + j];
                let (row_i, row_j) = (i * dim, j * dim);
                for k in 0..j {
                    v -= a[row_i + k] * a[row_j + k];
                }
                a[i * dim + j] = v / diag;
            }
        }
        Ok(Cholesky { factor: a, dim })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut v = x[i];
            for k in 0..i {
                v -= self.factor[i * n + k] * x[k];
            }
            x[i] = v / self.factor[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in i + 1..n {
                v -= self.factor[k * n + i] * x[k];
            }
            x[i] = v / self.factor[i * n + i];
        }
        x
    }
}

/// Projection workspace for a fixed reference set and filter length.
struct ProjectionBasis {
    n_refs: usize,
    n_samples: usize,
    filter_len: usize,
    n_fft: usize,
    ref_spectra: Vec<Vec<Complex64>>,
    chol_all: Cholesky,
    chol_single: Vec<Cholesky>,
}

fn forward_fft(
    samples: impl Iterator<Item = f64>,
    n_fft: usize,
    planner: &mut FftPlanner<f64>,
) -> Vec<Complex64> {
    let mut buf = vec![Complex64::default(); n_fft];
    for (b, v) in buf.iter_mut().zip(samples) {
        *b = Complex64::new(v, 0.0);
    }
    planner.plan_fft_forward(n_fft).process(&mut buf);
    buf
}

/// Cross-correlations `c[d] = sum_u a[u] b[u+d]` for `d` in
/// `-(max_lag-1)..=max_lag-1`, returned with `c[d]` at `d + max_lag - 1`.
fn cross_correlation(
    a_spec: &[Complex64],
    b_spec: &[Complex64],
    max_lag: usize,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let n_fft = a_spec.len();
    let mut buf: Vec<Complex64> = a_spec
        .iter()
        .zip(b_spec.iter())
        .map(|(a, b)| a.conj() * b)
        .collect();
    planner.plan_fft_inverse(n_fft).process(&mut buf);
    let norm = 1.0 / n_fft as f64;
    let mut out = vec![0.0f64; 2 * max_lag - 1];
    for d in 0..max_lag {
        out[d + max_lag - 1] = buf[d].re * norm;
        if d > 0 {
            out[max_lag - 1 - d] = buf[n_fft - d].re * norm;
        }
    }
    out
}

impl ProjectionBasis {
    fn new(references: &TimeSignal, filter_len: usize) -> Result<Self> {
        let n_refs = references.n_channels();
        let n_samples = references.n_samples();
        if filter_len == 0 || filter_len >= n_samples {
            return Err(BssError::InvalidConfig(format!(
                "filter_len {filter_len} must be in 1..{n_samples}"
            )));
        }
        for i in 0..n_refs {
            if references.channel(i).iter().all(|&v| v == 0.0) {
                return Err(BssError::ZeroEnergyReference(i));
            }
        }
        let mut planner = FftPlanner::<f64>::new();
        let n_fft = (n_samples + filter_len).next_power_of_two();
        let ref_spectra: Vec<Vec<Complex64>> = (0..n_refs)
            .map(|i| forward_fft(references.channel(i).iter().copied(), n_fft, &mut planner))
            .collect();

        // Gram matrix of all delayed references, block (i, i') Toeplitz in
        // the lag difference
        let dim = n_refs * filter_len;
        let mut gram = vec![0.0f64; dim * dim];
        for i in 0..n_refs {
            for i2 in 0..n_refs {
                let corr = cross_correlation(
                    &ref_spectra[i],
                    &ref_spectra[i2],
                    filter_len,
                    &mut planner,
                );
                for t1 in 0..filter_len {
                    let row = (i * filter_len + t1) * dim + i2 * filter_len;
                    for t2 in 0..filter_len {
                        // c[t1 - t2] stored at (t1 - t2) + filter_len - 1
                        gram[row + t2] = corr[t1 + filter_len - 1 - t2];
                    }
                }
            }
        }
        let trace: f64 = (0..dim).map(|i| gram[i * dim + i]).sum();
        let reg = GRAM_REG_REL * trace;
        for i in 0..dim {
            gram[i * dim + i] += reg;
        }

        let chol_single: Vec<Cholesky> = (0..n_refs)
            .map(|i| {
                let mut sub = vec![0.0f64; filter_len * filter_len];
                for t1 in 0..filter_len {
                    let row = (i * filter_len + t1) * dim + i * filter_len;
                    sub[t1 * filter_len..(t1 + 1) * filter_len]
                        .copy_from_slice(&gram[row..row + filter_len]);
                }
                Cholesky::new(sub, filter_len)
            })
            .collect::<Result<_>>()?;
        let chol_all = Cholesky::new(gram, dim)?;

        Ok(ProjectionBasis {
            n_refs,
            n_samples,
            filter_len,
            n_fft,
            ref_spectra,
            chol_all,
            chol_single,
        })
    }

    /// Filtered-sum synthesis `sum_i conv(coeffs_i, ref_i)` over the padded
    /// support, via the cached reference spectra.
    fn synthesize_projection(
        &self,
        coeffs: &[f64],
        refs: &[usize],
        planner: &mut FftPlanner<f64>,
    ) -> Vec<f64> {
        let mut acc = vec![Complex64::default(); self.n_fft];
        for (slot, &i) in refs.iter().enumerate() {
            let a = &coeffs[slot * self.filter_len..(slot + 1) * self.filter_len];
            let a_spec = forward_fft(a.iter().copied(), self.n_fft, planner);
            for ((dst, av), sv) in acc
                .iter_mut()
                .zip(a_spec.iter())
                .zip(self.ref_spectra[i].iter())
            {
                *dst += av * sv;
            }
        }
        planner.plan_fft_inverse(self.n_fft).process(&mut acc);
        let norm = 1.0 / self.n_fft as f64;
        acc.iter()
            .take(self.n_samples + self.filter_len - 1)
            .map(|v| v.re * norm)
            .collect()
    }

    /// SDR and SIR of one estimate against every reference.
    fn decompose(&self, estimate: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut planner = FftPlanner::<f64>::new();
        let est_spec = forward_fft(estimate.iter().copied(), self.n_fft, &mut planner);

        // least-squares coefficients onto the span of all references
        let mut rhs_all = vec![0.0f64; self.n_refs * self.filter_len];
        for i in 0..self.n_refs {
            let corr =
                cross_correlation(&self.ref_spectra[i], &est_spec, self.filter_len, &mut planner);
            // positive lags only: c[tau] = sum_u ref[u] est[u + tau]
            rhs_all[i * self.filter_len..(i + 1) * self.filter_len]
                .copy_from_slice(&corr[self.filter_len - 1..]);
        }
        let coeff_all = self.chol_all.solve(&rhs_all);
        let all_refs: Vec<usize> = (0..self.n_refs).collect();
        let proj_all = self.synthesize_projection(&coeff_all, &all_refs, &mut planner);

        let support = self.n_samples + self.filter_len - 1;
        let mut sdr = Vec::with_capacity(self.n_refs);
        let mut sir = Vec::with_capacity(self.n_refs);
        for i in 0..self.n_refs {
            let rhs = &rhs_all[i * self.filter_len..(i + 1) * self.filter_len];
            let coeff = self.chol_single[i].solve(rhs);
            let target = self.synthesize_projection(&coeff, &[i], &mut planner);

            let mut target_energy = 0.0f64;
            let mut interf_energy = 0.0f64;
            let mut distortion_energy = 0.0f64;
            for t in 0..support {
                let s = target[t];
                let interf = proj_all[t] - s;
                let est = if t < self.n_samples { estimate[t] } else { 0.0 };
                let distortion = est - s;
                target_energy += s * s;
                interf_energy += interf * interf;
                distortion_energy += distortion * distortion;
            }
            sdr.push(ratio_db(target_energy, distortion_energy));
            sir.push(ratio_db(target_energy, interf_energy));
        }
        (sdr, sir)
    }
}

/// SDR and SIR of every estimate against every reference; rows index
/// estimates, columns index references.
pub fn pairwise_eval(
    references: &TimeSignal,
    estimates: &TimeSignal,
    filter_len: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if references.n_samples() != estimates.n_samples() {
        return Err(BssError::ShapeMismatch(format!(
            "references have {} samples, estimates {}",
            references.n_samples(),
            estimates.n_samples()
        )));
    }
    let basis = ProjectionBasis::new(references, filter_len)?;
    let n_est = estimates.n_channels();
    let mut sdr = Array2::<f64>::zeros((n_est, basis.n_refs));
    let mut sir = Array2::<f64>::zeros((n_est, basis.n_refs));
    for j in 0..n_est {
        let est: Vec<f64> = estimates.channel(j).to_vec();
        let (sdr_j, sir_j) = basis.decompose(&est);
        for i in 0..basis.n_refs {
            sdr[[j, i]] = sdr_j[i];
            sir[[j, i]] = sir_j[i];
        }
    }
    Ok((sdr, sir))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn recurse(remaining: &mut Vec<usize>, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(current.clone());
            return;
        }
        for idx in 0..remaining.len() {
            let v = remaining.remove(idx);
            current.push(v);
            recurse(remaining, current, out);
            current.pop();
            remaining.insert(idx, v);
        }
    }
    let mut out = Vec::new();
    recurse(&mut (0..n).collect(), &mut Vec::new(), &mut out);
    out
}

/// Full evaluation: pairwise decomposition plus the SIR-maximizing
/// assignment of estimates to references.
pub fn bss_eval(
    references: &TimeSignal,
    estimates: &TimeSignal,
    filter_len: usize,
) -> Result<EvalReport> {
    if references.n_channels() != estimates.n_channels() {
        return Err(BssError::ShapeMismatch(format!(
            "{} references vs {} estimates",
            references.n_channels(),
            estimates.n_channels()
        )));
    }
    let (sdr, sir) = pairwise_eval(references, estimates, filter_len)?;
    let n = references.n_channels();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(n) {
        let mean: f64 = (0..n).map(|j| sir[[j, perm[j]]]).sum::<f64>() / n as f64;
        if best.as_ref().is_none_or(|(b, _)| mean > *b) {
            best = Some((mean, perm));
        }
    }
    let (_, permutation) = best.expect("at least one permutation");
    Ok(EvalReport {
        sdr_db: (0..n).map(|j| sdr[[j, permutation[j]]]).collect(),
        sir_db: (0..n).map(|j| sir[[j, permutation[j]]]).collect(),
        permutation,
        weak_source: None,
    })
}

/// Median and quartiles with linear interpolation between order statistics
/// (quantile `q` sits at fractional position `q * (count - 1)`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SummaryStats {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub count: usize,
}

pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "percentile of empty slice");
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn summarize(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(BssError::InvalidConfig("summarize of empty set".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(SummaryStats {
        median: percentile(&sorted, 0.5),
        q25: percentile(&sorted, 0.25),
        q75: percentile(&sorted, 0.75),
        count: sorted.len(),
    })
}

/// Pooled summary over a batch of reports: overall statistics plus the
/// weak-source-only breakout when reports carry the flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub sdr: SummaryStats,
    pub sir: SummaryStats,
    pub weak_sdr: Option<SummaryStats>,
    pub weak_sir: Option<SummaryStats>,
}

pub fn summarize_reports(reports: &[EvalReport]) -> Result<ReportSummary> {
    let mut sdr = Vec::new();
    let mut sir = Vec::new();
    let mut weak_sdr = Vec::new();
    let mut weak_sir = Vec::new();
    for report in reports {
        for j in 0..report.permutation.len() {
            sdr.push(report.sdr_db[j]);
            sir.push(report.sir_db[j]);
            if report.weak_source == Some(report.permutation[j]) {
                weak_sdr.push(report.sdr_db[j]);
                weak_sir.push(report.sir_db[j]);
            }
        }
    }
    Ok(ReportSummary {
        sdr: summarize(&sdr)?,
        sir: summarize(&sir)?,
        weak_sdr: if weak_sdr.is_empty() {
            None
        } else {
            Some(summarize(&weak_sdr)?)
        },
        weak_sir: if weak_sir.is_empty() {
            None
        } else {
            Some(summarize(&weak_sir)?)
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn noise_signal(n_ch: usize, n: usize, seed: u64) -> TimeSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Array2::<f64>::zeros((n_ch, n));
        let mut states = vec![0.0f64; n_ch];
        for t in 0..n {
            for (ch, st) in states.iter_mut().enumerate() {
                *st = 0.8 * *st + 0.2 * randn(&mut rng);
                data[[ch, t]] = *st;
            }
        }
        TimeSignal::new(data, 16_000).unwrap()
    }

    #[test]
    fn identical_estimate_hits_the_cap() {
        let refs = noise_signal(1, 4000, 1);
        let report = bss_eval(&refs, &refs.clone(), 64).unwrap();
        assert_eq!(report.sdr_db[0], 100.0);
        assert_eq!(report.sir_db[0], 100.0);
    }

    #[test]
    fn additive_noise_at_minus_20db_gives_sdr_near_20() {
        let refs = noise_signal(1, 16_000, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ref_energy: f64 = refs.channel(0).iter().map(|v| v * v).sum();
        let noise: Vec<f64> = (0..16_000).map(|_| randn(&mut rng)).collect();
        let noise_energy: f64 = noise.iter().map(|v| v * v).sum();
        let scale = (ref_energy / noise_energy).sqrt() * 0.1; // -20 dB
        let est_data = Array2::from_shape_fn((1, 16_000), |(_, t)| {
            refs.data[[0, t]] + scale * noise[t]
        });
        let estimates = TimeSignal::new(est_data, 16_000).unwrap();
        let report = bss_eval(&refs, &estimates, 512).unwrap();
        assert!(
            (report.sdr_db[0] - 20.0).abs() <= 0.5,
            "SDR {}",
            report.sdr_db[0]
        );
    }

    #[test]
    fn swapped_channels_recover_the_permutation() {
        let refs = noise_signal(2, 6000, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // estimates = slightly noisy references, channel-swapped
        let est_data = Array2::from_shape_fn((2, 6000), |(ch, t)| {
            refs.data[[1 - ch, t]] + 0.01 * randn(&mut rng)
        });
        let estimates = TimeSignal::new(est_data, 16_000).unwrap();
        let swapped = bss_eval(&refs, &estimates, 64).unwrap();
        assert_eq!(swapped.permutation, vec![1, 0]);

        let unswapped_est = TimeSignal::new(
            Array2::from_shape_fn((2, 6000), |(ch, t)| estimates.data[[1 - ch, t]]),
            16_000,
        )
        .unwrap();
        let unswapped = bss_eval(&refs, &unswapped_est, 64).unwrap();
        assert_eq!(unswapped.permutation, vec![0, 1]);
        for j in 0..2 {
            assert!((swapped.sdr_db[j] - unswapped.sdr_db[1 - j]).abs() < 1e-9);
            assert!((swapped.sir_db[j] - unswapped.sir_db[1 - j]).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_invariance() {
        let refs = noise_signal(2, 6000, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let est_data = Array2::from_shape_fn((2, 6000), |(ch, t)| {
            refs.data[[ch, t]] + 0.1 * randn(&mut rng)
        });
        let estimates = TimeSignal::new(est_data.clone(), 16_000).unwrap();
        let scaled = TimeSignal::new(est_data * 3.7, 16_000).unwrap();
        let a = bss_eval(&refs, &estimates, 128).unwrap();
        let b = bss_eval(&refs, &scaled, 128).unwrap();
        for j in 0..2 {
            assert!((a.sdr_db[j] - b.sdr_db[j]).abs() <= 1e-6);
            assert!((a.sir_db[j] - b.sir_db[j]).abs() <= 1e-6);
        }
    }

    #[test]
    fn sir_never_below_sdr() {
        let refs = noise_signal(3, 5000, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let est_data = Array2::from_shape_fn((3, 5000), |(ch, t)| {
            refs.data[[ch, t]] + 0.3 * refs.data[[(ch + 1) % 3, t]] + 0.05 * randn(&mut rng)
        });
        let estimates = TimeSignal::new(est_data, 16_000).unwrap();
        let report = bss_eval(&refs, &estimates, 64).unwrap();
        for j in 0..3 {
            assert!(report.sir_db[j] >= report.sdr_db[j] - 1e-9);
        }
    }

    #[test]
    fn zero_energy_reference_is_rejected() {
        let mut refs = noise_signal(2, 4000, 10);
        refs.data.row_mut(1).fill(0.0);
        let estimates = noise_signal(2, 4000, 11);
        assert!(matches!(
            bss_eval(&refs, &estimates, 64),
            Err(BssError::ZeroEnergyReference(1))
        ));
    }

    #[test]
    fn projection_matches_direct_normal_equations() {
        // brute-force Gram/right-hand-side assembly on a short signal
        let n = 400;
        let l = 8;
        let refs = noise_signal(2, n, 12);
        let est = noise_signal(1, n, 13);

        let basis = ProjectionBasis::new(&refs, l).unwrap();
        let mut planner = FftPlanner::<f64>::new();
        let est_vec: Vec<f64> = est.channel(0).to_vec();
        let est_spec = forward_fft(est_vec.iter().copied(), basis.n_fft, &mut planner);
        let mut rhs = vec![0.0f64; 2 * l];
        for i in 0..2 {
            let corr = cross_correlation(&basis.ref_spectra[i], &est_spec, l, &mut planner);
            rhs[i * l..(i + 1) * l].copy_from_slice(&corr[l - 1..]);
        }
        let coeff = basis.chol_all.solve(&rhs);

        // direct assembly: delayed reference dictionary, zero-padded
        let sample = |i: usize, t: isize| -> f64 {
            if t >= 0 && (t as usize) < n {
                refs.data[[i, t as usize]]
            } else {
                0.0
            }
        };
        let dim = 2 * l;
        let mut gram = vec![0.0f64; dim * dim];
        let mut rhs_direct = vec![0.0f64; dim];
        for i in 0..2 {
            for t1 in 0..l {
                let row = i * l + t1;
                for i2 in 0..2 {
                    for t2 in 0..l {
                        let col = i2 * l + t2;
                        let mut acc = 0.0;
                        for t in 0..(n + l) as isize {
                            acc += sample(i, t - t1 as isize) * sample(i2, t - t2 as isize);
                        }
                        gram[row * dim + col] = acc;
                    }
                }
                let mut acc = 0.0;
                for (t, &e) in est_vec.iter().enumerate() {
                    acc += e * sample(i, t as isize - t1 as isize);
                }
                rhs_direct[row] = acc;
            }
        }
        let trace: f64 = (0..dim).map(|i| gram[i * dim + i]).sum();
        for i in 0..dim {
            gram[i * dim + i] += GRAM_REG_REL * trace;
        }
        let coeff_direct = Cholesky::new(gram, dim).unwrap().solve(&rhs_direct);
        for (a, b) in coeff.iter().zip(coeff_direct.iter()) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    fn white_signal(n_ch: usize, n: usize, seed: u64) -> TimeSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((n_ch, n), |_| randn(&mut rng));
        TimeSignal::new(data, 16_000).unwrap()
    }

    #[test]
    fn filtered_reference_has_no_artifacts() {
        // an estimate inside the span of delayed copies of its reference
        // projects exactly up to the Gram regularization; white references
        // keep the projection well conditioned, and zeroed reference tails
        // keep the filtered copy inside the evaluated support
        let mut refs = white_signal(2, 6000, 14);
        for ch in 0..2 {
            for t in 5992..6000 {
                refs.data[[ch, t]] = 0.0;
            }
        }
        let taps = [0.7, 0.0, -0.3, 0.1];
        let est_data = Array2::from_shape_fn((2, 6000), |(ch, t)| {
            taps.iter()
                .enumerate()
                .map(|(d, &a)| {
                    if t >= d {
                        a * refs.data[[ch, t - d]]
                    } else {
                        0.0
                    }
                })
                .sum()
        });
        let estimates = TimeSignal::new(est_data, 16_000).unwrap();
        let report = bss_eval(&refs, &estimates, 64).unwrap();
        for j in 0..2 {
            assert!(report.sdr_db[j] >= 90.0, "SDR {}", report.sdr_db[j]);
        }
    }

    #[test]
    fn permutation_matches_brute_force_on_pairwise_matrix() {
        let refs = noise_signal(3, 5000, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let order = [2usize, 0, 1];
        let est_data = Array2::from_shape_fn((3, 5000), |(ch, t)| {
            refs.data[[order[ch], t]]
                + 0.2 * refs.data[[(order[ch] + 1) % 3, t]]
                + 0.02 * randn(&mut rng)
        });
        let estimates = TimeSignal::new(est_data, 16_000).unwrap();
        let report = bss_eval(&refs, &estimates, 32).unwrap();
        let (_, sir) = pairwise_eval(&refs, &estimates, 32).unwrap();
        let mut best_perm = None;
        let mut best = f64::NEG_INFINITY;
        for perm in permutations(3) {
            let mean: f64 = (0..3).map(|j| sir[[j, perm[j]]]).sum::<f64>() / 3.0;
            if mean > best {
                best = mean;
                best_perm = Some(perm);
            }
        }
        assert_eq!(report.permutation, best_perm.unwrap());
        assert_eq!(report.permutation, order.to_vec());
    }

    #[test]
    fn quartiles_interpolate_linearly() {
        let stats = summarize(&[0.0, 10.0, 20.0]).unwrap();
        assert_eq!(stats.median, 10.0);
        assert_eq!(stats.q25, 5.0);
        assert_eq!(stats.q75, 15.0);
    }

    #[test]
    fn single_report_summary_equals_report() {
        let report = EvalReport {
            sdr_db: vec![7.5],
            sir_db: vec![12.0],
            permutation: vec![0],
            weak_source: Some(0),
        };
        let summary = summarize_reports(&[report]).unwrap();
        assert_eq!(summary.sdr.median, 7.5);
        assert_eq!(summary.sir.median, 12.0);
        assert_eq!(summary.weak_sir.unwrap().median, 12.0);
    }
}
