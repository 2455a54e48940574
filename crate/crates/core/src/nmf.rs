//! Itakura-Saito NMF multiplicative updates for the stacked blinky power /
//! source power matrix.
//!
//! The blinky power matrix `U` (B x N) is modeled as `U ~ 2F * G R_K` with
//! nonnegative gains `G` (B x K) and source variances `R_K` (K x N), while
//! the demixed frame powers `P_K` (K x N) tie the same variances to the
//! separated signals. Both constraints combine into a single Itakura-Saito
//! divergence on a stacked matrix, which the updates below decrease
//! monotonically.

use ndarray::Array2;

use crate::error::{BssError, Result};

/// Relative floor applied to every entry after a multiplicative update, as
/// a fraction of the updated matrix mean. Multiplicative updates cannot
/// leave an exact zero, so entries are clamped away from it.
pub const ENTRY_FLOOR_REL: f64 = 1e-12;

fn check_positive(name: &str, m: &Array2<f64>) -> Result<()> {
    if m.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(BssError::DegenerateNmf(format!(
            "{name} contains negative or non-finite entries"
        )));
    }
    Ok(())
}

fn floor_entries(m: &mut Array2<f64>) {
    let mean = m.mean().unwrap_or(0.0);
    let floor = ENTRY_FLOOR_REL * mean;
    if floor > 0.0 {
        m.mapv_inplace(|v| v.max(floor));
    }
}

fn check_shapes(
    blinky_power: &Array2<f64>,
    gains: &Array2<f64>,
    variances: &Array2<f64>,
) -> Result<(usize, usize, usize)> {
    let (b, n) = blinky_power.dim();
    let (gb, k) = gains.dim();
    let (rk, rn) = variances.dim();
    if gb != b || rk != k || rn != n {
        return Err(BssError::ShapeMismatch(format!(
            "U is {b}x{n}, G is {gb}x{k}, R_K is {rk}x{rn}"
        )));
    }
    Ok((b, k, n))
}

/// Multiplicative update of the gain matrix `G`.
///
/// `G <- G .* ( ((1/(2F)) U .* (G R_K)^-2) R_K^T ./ ((G R_K)^-1 R_K^T) )^(1/2)`
pub fn update_gains(
    blinky_power: &Array2<f64>,
    gains: &Array2<f64>,
    variances: &Array2<f64>,
    n_bins: usize,
) -> Result<Array2<f64>> {
    check_shapes(blinky_power, gains, variances)?;
    check_positive("U", blinky_power)?;
    check_positive("G", gains)?;
    check_positive("R_K", variances)?;

    let model = gains.dot(variances); // B x N
    if model.iter().any(|&v| v <= 0.0) {
        return Err(BssError::DegenerateNmf("G R_K has a zero entry".into()));
    }
    let half_f = 2.0 * n_bins as f64;
    let num_inner = blinky_power / &model.mapv(|v| v * v) / half_f; // (1/(2F)) U .* (GR)^-2
    let num = num_inner.dot(&variances.t()); // B x K
    let den = model.mapv(|v| 1.0 / v).dot(&variances.t()); // B x K
    if den.iter().any(|&v| v <= 0.0) {
        return Err(BssError::DegenerateNmf("zero denominator in G update".into()));
    }
    let mut updated = gains * &(num / den).mapv(f64::sqrt);
    floor_entries(&mut updated);
    Ok(updated)
}

/// Multiplicative update of the coupled variance rows `R_K`.
///
/// `R_K <- R_K .* ( ((1/F) P_K .* R_K^-2 + G^T ((1/(2F)) U .* (G R_K)^-2))
///                  ./ (R_K^-1 + G^T (G R_K)^-1) )^(1/2)`
///
/// With `G` identically zero the blinky coupling drops out and the update
/// reduces to the geometric step `R_K <- sqrt(R_K .* P_K / F)`.
pub fn update_coupled_variances(
    blinky_power: &Array2<f64>,
    gains: &Array2<f64>,
    variances: &Array2<f64>,
    frame_power: &Array2<f64>,
    n_bins: usize,
) -> Result<Array2<f64>> {
    let (_, k, n) = check_shapes(blinky_power, gains, variances)?;
    if frame_power.dim() != (k, n) {
        return Err(BssError::ShapeMismatch(format!(
            "P_K is {:?}, expected {k}x{n}",
            frame_power.dim()
        )));
    }
    check_positive("U", blinky_power)?;
    check_positive("G", gains)?;
    check_positive("R_K", variances)?;
    check_positive("P_K", frame_power)?;
    if variances.iter().any(|&v| v <= 0.0) {
        return Err(BssError::DegenerateNmf("R_K has a zero entry".into()));
    }

    let f = n_bins as f64;
    let decoupled = gains.iter().all(|&g| g == 0.0);

    let power_term = frame_power / &variances.mapv(|v| v * v) / f; // (1/F) P .* R^-2
    let inv_r = variances.mapv(|v| 1.0 / v);
    let (num, den) = if decoupled {
        (power_term, inv_r)
    } else {
        let model = gains.dot(variances);
        if model.iter().any(|&v| v <= 0.0) {
            return Err(BssError::DegenerateNmf("G R_K has a zero entry".into()));
        }
        let coupling = blinky_power / &model.mapv(|v| v * v) / (2.0 * f);
        let num = power_term + gains.t().dot(&coupling);
        let den = inv_r + gains.t().dot(&model.mapv(|v| 1.0 / v));
        (num, den)
    };
    if den.iter().any(|&v| v <= 0.0) {
        return Err(BssError::DegenerateNmf("zero denominator in R_K update".into()));
    }
    let mut updated = variances * &(num / den).mapv(f64::sqrt);
    floor_entries(&mut updated);
    Ok(updated)
}

/// Itakura-Saito divergence of the stacked power model.
///
/// Stacks `U/(2F)` on top of `P_K/F` and compares against `[G; I_K] R_K`
/// entrywise with `d(u|v) = u/v - log(u/v) - 1`.
pub fn stacked_is_divergence(
    blinky_power: &Array2<f64>,
    frame_power: &Array2<f64>,
    gains: &Array2<f64>,
    variances: &Array2<f64>,
    n_bins: usize,
) -> Result<f64> {
    let (_, k, n) = check_shapes(blinky_power, gains, variances)?;
    if frame_power.dim() != (k, n) {
        return Err(BssError::ShapeMismatch(format!(
            "P_K is {:?}, expected {k}x{n}",
            frame_power.dim()
        )));
    }
    let f = n_bins as f64;
    let model = gains.dot(variances);
    let mut total = 0.0;
    for ((i, j), &u) in blinky_power.indexed_iter() {
        let target = u / (2.0 * f);
        let v = model[[i, j]];
        if target <= 0.0 || v <= 0.0 {
            return Err(BssError::DegenerateNmf(
                "nonpositive entry in stacked divergence".into(),
            ));
        }
        let ratio = target / v;
        total += ratio - ratio.ln() - 1.0;
    }
    for ((i, j), &p) in frame_power.indexed_iter() {
        let target = p / f;
        let v = variances[[i, j]];
        if target <= 0.0 || v <= 0.0 {
            return Err(BssError::DegenerateNmf(
                "nonpositive entry in stacked divergence".into(),
            ));
        }
        let ratio = target / v;
        total += ratio - ratio.ln() - 1.0;
    }
    Ok(total)
}
