//! Closed-form reference precoders, scaled to the per-antenna budget.
//!
//! `zf_square` inverts the row-stacked channel so that `H W = I`; `rzf`
//! uses `W = H^H (H H^H + alpha I)^-1` with `alpha = K N0 / sum_n P_n`.
//! Optimal zero-forcing for `N_t > K` needs a conic solver and is not
//! provided; use `rzf` there.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{min_sinr, BeamformingMatrix, ProblemInstance};
use crate::recover::regulate;

/// Zero-forcing for `N_t = K`. Returns the scaled beamformer and its
/// min-SINR.
pub fn zf_square(inst: &ProblemInstance) -> Result<(BeamformingMatrix, f64)> {
    let (k, nt) = (inst.users(), inst.antennas());
    if k != nt {
        return Err(Error::NotSquare { nt, k });
    }
    let inv = inst
        .channels()
        .clone()
        .try_inverse()
        .ok_or(Error::SingularChannel)?;
    if inv.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularChannel);
    }
    let w = regulate(&BeamformingMatrix::new(inv), inst.power_budget())?;
    let gamma = min_sinr(inst, &w)?;
    Ok((w, gamma))
}

/// Zero-forcing through the right pseudo-inverse `H^H (H H^H)^-1`,
/// `K <= N_t`. Coincides with [`zf_square`] when `N_t = K`.
pub fn zf(inst: &ProblemInstance) -> Result<BeamformingMatrix> {
    if inst.users() > inst.antennas() {
        return Err(Error::DimensionMismatch(format!(
            "zero-forcing needs K <= N_t, got K = {}, N_t = {}",
            inst.users(),
            inst.antennas()
        )));
    }
    let dir = rzf_direction(inst, 0.0)?;
    if dir.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularChannel);
    }
    regulate(&BeamformingMatrix::new(dir), inst.power_budget())
}

/// Regularization weight `K N0 / sum_n P_n`.
pub fn rzf_alpha(inst: &ProblemInstance) -> f64 {
    inst.users() as f64 * inst.noise_power() / inst.power_budget().sum()
}

/// Unscaled regularized zero-forcing direction for an explicit `alpha`.
pub fn rzf_direction(inst: &ProblemInstance, alpha: f64) -> Result<CMatrix> {
    let h = inst.channels();
    let k = inst.users();
    let mut gram = h * h.adjoint();
    for i in 0..k {
        gram[(i, i)] += Complex64::new(alpha, 0.0);
    }
    let inv = gram.try_inverse().ok_or(Error::SingularChannel)?;
    Ok(h.adjoint() * inv)
}

/// Regularized zero-forcing, `K <= N_t`.
pub fn rzf(inst: &ProblemInstance) -> Result<BeamformingMatrix> {
    if inst.users() > inst.antennas() {
        return Err(Error::DimensionMismatch(format!(
            "RZF needs K <= N_t, got K = {}, N_t = {}",
            inst.users(),
            inst.antennas()
        )));
    }
    let dir = rzf_direction(inst, rzf_alpha(inst))?;
    regulate(&BeamformingMatrix::new(dir), inst.power_budget())
}

pub fn rzf_with_gamma(inst: &ProblemInstance) -> Result<(BeamformingMatrix, f64)> {
    let w = rzf(inst)?;
    let g = min_sinr(inst, &w)?;
    Ok((w, g))
}
