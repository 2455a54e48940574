//! Joint separation of microphone recordings and blinky power signals.
//!
//! Each outer iteration alternates NMF sub-iterations on the stacked power
//! model, closed-form variance updates for the channels not coupled to the
//! blinkies, iterative-projection updates of the demixing matrices with
//! floored variances, demixing, and a rescaling step that fixes the scale
//! indeterminacy between the demixing matrices, gains, and variances.

use ndarray::{s, Array2};
use num_complex::Complex64;
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auxiva::{ip_update_row, DemixingStack};
use crate::error::{BssError, Result};
use crate::nmf::{update_coupled_variances, update_gains};
use crate::stft::Spectrogram;

/// Configuration of the joint algorithm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointConfig {
    /// Outer iterations.
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    /// NMF sub-iterations per outer iteration.
    #[serde(default = "default_nmf_sub_iter")]
    pub nmf_sub_iter: usize,
    /// Number of sources coupled to the blinky signals (the rank K).
    #[serde(default = "default_coupling_rank", rename = "k")]
    pub coupling_rank: usize,
    /// Relative variance floor; the effective floor is this factor times
    /// the global mean of `P/F` at initialization.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_iter() -> usize {
    100
}
fn default_nmf_sub_iter() -> usize {
    20
}
fn default_coupling_rank() -> usize {
    2
}
fn default_epsilon() -> f64 {
    1e-10
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            n_iter: default_n_iter(),
            nmf_sub_iter: default_nmf_sub_iter(),
            coupling_rank: default_coupling_rank(),
            epsilon: default_epsilon(),
            seed: 0,
        }
    }
}

/// All free parameters of the joint model plus the demixed signal.
#[derive(Debug, Clone)]
pub struct JointState {
    pub stack: DemixingStack,
    /// Blinky gains, B x K.
    pub gains: Array2<f64>,
    /// Source variances, M x N (top K rows are coupled to the blinkies).
    pub variances: Array2<f64>,
    /// Demixed per-frame power `P[k,n] = ||y_kn||^2`, M x N.
    pub frame_power: Array2<f64>,
    /// Blinky power matrix U, B x N.
    pub blinky_power: Array2<f64>,
    /// Demixed spectrogram, all M channels.
    pub demixed: Spectrogram,
    /// Cost after initialization and after each outer iteration.
    pub cost_trace: Vec<f64>,
    /// Effective variance floor used by the run.
    pub floor: f64,
}

impl JointState {
    pub fn n_bins(&self) -> usize {
        self.demixed.n_bins()
    }

    pub fn coupling_rank(&self) -> usize {
        self.gains.ncols()
    }
}

/// Joint negative log-likelihood up to an additive constant:
///
/// `J = -2N sum_f log|det W_f|
///      + sum_{k<=M,n} (||y_kn||^2 / r_kn + F log r_kn)
///      + sum_{b,n} (F log sum_k g_bk r_kn + u_bn / (2 sum_k g_bk r_kn))`
pub fn joint_cost(state: &JointState) -> Result<f64> {
    let n_bins = state.n_bins() as f64;
    let n_frames = state.demixed.n_frames() as f64;
    let k = state.coupling_rank();

    let log_det = state.stack.log_abs_det_sum();
    if !log_det.is_finite() {
        return Err(BssError::Numerical(
            "singular demixing matrix in cost".into(),
        ));
    }
    let mut cost = -2.0 * n_frames * log_det;

    for (p, r) in state.frame_power.iter().zip(state.variances.iter()) {
        if !(*r > 0.0) {
            return Err(BssError::NonpositiveVariance(format!(
                "source variance {r}"
            )));
        }
        cost += p / r + n_bins * r.ln();
    }

    let coupled = state.variances.slice(s![0..k, ..]);
    let model = state.gains.dot(&coupled); // B x N
    for (u, v) in state.blinky_power.iter().zip(model.iter()) {
        if !(*v > 0.0) {
            return Err(BssError::NonpositiveVariance(format!(
                "blinky mixture variance {v}"
            )));
        }
        cost += n_bins * v.ln() + u / (2.0 * v);
    }
    Ok(cost)
}

/// Closed-form variance update for channels not coupled to the blinkies:
/// `r_kn = ||y_kn||^2 / F` for `k > K`, floored.
pub fn update_uncoupled_variances(state: &mut JointState) {
    let n_bins = state.n_bins() as f64;
    let k = state.coupling_rank();
    for row in k..state.variances.nrows() {
        for n in 0..state.variances.ncols() {
            state.variances[[row, n]] = (state.frame_power[[row, n]] / n_bins).max(state.floor);
        }
    }
}

/// Normalize every variance row to unit mean and absorb the scales into the
/// gains, demixing matrices, frame powers, and demixed signal. Leaves the
/// cost unchanged.
pub fn rescale(state: &mut JointState) -> Result<()> {
    let n_frames = state.variances.ncols() as f64;
    let k = state.coupling_rank();
    let scales: Vec<f64> = state
        .variances
        .rows()
        .into_iter()
        .map(|row| row.sum() / n_frames)
        .collect();
    for (row, &lambda) in scales.iter().enumerate() {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(BssError::NonpositiveVariance(format!(
                "variance row {row} has mean {lambda}"
            )));
        }
    }

    for (row, &lambda) in scales.iter().enumerate() {
        let inv = 1.0 / lambda;
        let inv_sqrt = inv.sqrt();
        state
            .variances
            .row_mut(row)
            .mapv_inplace(|v| v * inv);
        state
            .frame_power
            .row_mut(row)
            .mapv_inplace(|v| v * inv);
        if row < k {
            state
                .gains
                .column_mut(row)
                .mapv_inplace(|v| v * lambda);
        }
        let scale_c = Complex64::new(inv_sqrt, 0.0);
        for w in state.stack.mats.iter_mut() {
            for m in 0..w.ncols() {
                w[[row, m]] *= scale_c;
            }
        }
        for f in 0..state.demixed.n_bins() {
            for n in 0..state.demixed.n_frames() {
                state.demixed.data[[f, n, row]] *= scale_c;
            }
        }
    }
    Ok(())
}

/// Result of a full joint run.
#[derive(Debug)]
pub struct SeparationResult {
    /// The K coupled channels of the demixed spectrogram.
    pub demixed: Spectrogram,
    pub state: JointState,
    /// Largest deviation of `w^H V w` from one over all IP updates.
    pub ip_norm_dev: f64,
}

/// JSON-friendly snapshot of a separation run: final demixing matrices,
/// gains, variances, and the cost trace.
#[derive(Debug, Serialize, Deserialize)]
pub struct SeparationReport {
    pub cost_trace: Vec<f64>,
    /// B x K gains.
    pub gains: Vec<Vec<f64>>,
    /// M x N variances.
    pub variances: Vec<Vec<f64>>,
    /// F x M x M demixing matrices as `[re, im]` pairs.
    pub demixing: Vec<Vec<Vec<[f64; 2]>>>,
}

impl SeparationResult {
    pub fn report(&self) -> SeparationReport {
        let to_rows = |m: &Array2<f64>| -> Vec<Vec<f64>> {
            m.rows().into_iter().map(|r| r.to_vec()).collect()
        };
        SeparationReport {
            cost_trace: self.state.cost_trace.clone(),
            gains: to_rows(&self.state.gains),
            variances: to_rows(&self.state.variances),
            demixing: self
                .state
                .stack
                .mats
                .iter()
                .map(|w| {
                    (0..w.nrows())
                        .map(|i| (0..w.ncols()).map(|j| [w[[i, j]].re, w[[i, j]].im]).collect())
                        .collect()
                })
                .collect(),
        }
    }
}

fn init_state(spec: &Spectrogram, blinky_power: Array2<f64>, cfg: &JointConfig) -> JointState {
    let n_bins = spec.n_bins();
    let n_ch = spec.n_channels();
    let k = cfg.coupling_rank;
    let demixed = spec.clone();
    let frame_power = demixed.frame_power();
    let floor = cfg.epsilon * frame_power.mean().unwrap_or(0.0) / n_bins as f64;

    let variances = frame_power.mapv(|p| (p / n_bins as f64).max(floor));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gains = Array2::from_shape_fn((blinky_power.nrows(), k), |_| {
        (0.5 + rng.random::<f64>()) / k as f64
    });

    JointState {
        stack: DemixingStack::identity(n_bins, n_ch),
        gains,
        variances,
        frame_power,
        blinky_power,
        demixed,
        cost_trace: Vec::new(),
        floor,
    }
}

fn nmf_phase(state: &mut JointState, sub_iters: usize) -> Result<()> {
    let k = state.coupling_rank();
    let n_bins = state.n_bins();
    let mut coupled = state.variances.slice(s![0..k, ..]).to_owned();
    let coupled_power = state.frame_power.slice(s![0..k, ..]).to_owned();
    for _ in 0..sub_iters {
        coupled = update_coupled_variances(
            &state.blinky_power,
            &state.gains,
            &coupled,
            &coupled_power,
            n_bins,
        )?;
        state.gains = update_gains(&state.blinky_power, &state.gains, &coupled, n_bins)?;
    }
    state.variances.slice_mut(s![0..k, ..]).assign(&coupled);
    Ok(())
}

fn ip_phase(state: &mut JointState, input: &Spectrogram) -> Result<f64> {
    let n_ch = input.n_channels();
    let n_frames = input.n_frames();
    let mut max_dev = 0.0f64;
    let mut weights = vec![0.0f64; n_frames];
    for k in 0..n_ch {
        for n in 0..n_frames {
            weights[n] = 1.0 / (2.0 * state.variances[[k, n]].max(state.floor));
        }
        let dev = ip_update_row(&mut state.stack.mats, &input.data, k, &weights)?;
        max_dev = max_dev.max(dev);
    }
    Ok(max_dev)
}

/// Run the joint algorithm on an M-channel spectrogram and a B x N blinky
/// power matrix. Returns the K coupled channels plus the full final state.
pub fn blinkiva_run(
    spec: &Spectrogram,
    blinky_power: &Array2<f64>,
    cfg: &JointConfig,
) -> Result<SeparationResult> {
    let n_ch = spec.n_channels();
    let n_frames = spec.n_frames();
    let k = cfg.coupling_rank;
    if k == 0 || k > n_ch {
        return Err(BssError::InvalidConfig(format!(
            "coupling rank {k} must be in 1..={n_ch}"
        )));
    }
    if cfg.nmf_sub_iter == 0 {
        return Err(BssError::InvalidConfig(
            "nmf_sub_iter must be >= 1".into(),
        ));
    }
    if blinky_power.ncols() != n_frames {
        return Err(BssError::ShapeMismatch(format!(
            "blinky power has {} frames, spectrogram has {n_frames}",
            blinky_power.ncols()
        )));
    }
    if blinky_power.nrows() == 0 {
        return Err(BssError::InvalidConfig("need at least one blinky".into()));
    }
    if blinky_power.iter().any(|&u| !u.is_finite() || u < 0.0) {
        return Err(BssError::InvalidConfig(
            "blinky power must be nonnegative and finite".into(),
        ));
    }
    // guard exact zeros: the IS model needs positive measurements
    let u_mean = blinky_power.mean().unwrap_or(0.0);
    if u_mean <= 0.0 {
        return Err(BssError::InvalidConfig("blinky power is all zero".into()));
    }
    let u_floor = 1e-12 * u_mean;
    let blinky = blinky_power.mapv(|u| u.max(u_floor));

    let mut state = init_state(spec, blinky, cfg);
    let mut ip_norm_dev = 0.0f64;
    state.cost_trace.push(joint_cost(&state)?);

    for _ in 0..cfg.n_iter {
        nmf_phase(&mut state, cfg.nmf_sub_iter)?;
        update_uncoupled_variances(&mut state);
        let dev = ip_phase(&mut state, spec)?;
        ip_norm_dev = ip_norm_dev.max(dev);
        state.demixed = state.stack.demix(spec);
        state.frame_power = state.demixed.frame_power();
        rescale(&mut state)?;
        state.cost_trace.push(joint_cost(&state)?);
    }

    let channels: Vec<usize> = (0..k).collect();
    let demixed = state.demixed.select_channels(&channels);
    Ok(SeparationResult {
        demixed,
        state,
        ip_norm_dev,
    })
}

/// Resolve the per-source scale ambiguity by projecting each demixed
/// channel back onto its image at the reference microphone: channel `k` of
/// `y` is scaled by entry `(mic, channels[k])` of `W_f^{-1}`.
pub fn projection_back(
    y: &mut Spectrogram,
    stack: &DemixingStack,
    mic: usize,
    channels: &[usize],
) -> Result<()> {
    if mic >= stack.n_channels() {
        return Err(BssError::InvalidConfig(format!(
            "reference microphone {mic} out of range"
        )));
    }
    if y.n_channels() != channels.len() {
        return Err(BssError::ShapeMismatch(format!(
            "{} demixed channels but {} channel indices",
            y.n_channels(),
            channels.len()
        )));
    }
    for f in 0..y.n_bins() {
        let inv = stack.inverse_at(f).ok_or(BssError::SingularUpdate {
            freq: f,
            channel: 0,
        })?;
        for (row, &k) in channels.iter().enumerate() {
            let scale = inv[[mic, k]];
            for n in 0..y.n_frames() {
                y.data[[f, n, row]] *= scale;
            }
        }
    }
    Ok(())
}
