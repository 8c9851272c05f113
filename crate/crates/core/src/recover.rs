//! From dual variables to a feasible downlink beamformer.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::balance::{compute_beta, fixed_point_balance, gamma_from_beta, uplink_mmse_beamformers};
use crate::error::{Error, Result};
use crate::model::{
    min_sinr, per_antenna_powers, BeamformingMatrix, DualVariables, ProblemInstance, SolverConfig,
};

/// Relative slack within which an input `mu` is silently renormalized.
pub const MU_RENORMALIZE_SLACK: f64 = 0.01;

const FALLBACK_FACTOR: f64 = 0.99;
const FALLBACK_RETRIES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub p: DVector<f64>,
}

/// Output of a recovery pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// Regulated, per-antenna feasible beamformer.
    pub w: BeamformingMatrix,
    /// Balanced beamformer before regulation.
    pub unregulated: BeamformingMatrix,
    /// Min-SINR of `w`.
    pub gamma: f64,
    /// SINR the power allocation was solved for (after any fallback).
    pub gamma_target: f64,
    /// The normalized dual actually used.
    pub dual: DualVariables,
    /// Largest `|sum - 1|` over the two dual normalizations of the input.
    pub renormalization: f64,
    /// Number of `gamma <- 0.99 gamma` retries taken.
    pub fallbacks: usize,
}

/// Downlink powers that give every user SINR `gamma` with directions `w_bar`.
///
/// Solves `(D - gamma F) p = gamma N0 1` where `D_kk = |h_k^T w_k|^2` and
/// `F_ki = |h_k^T w_i|^2` off the diagonal.
pub fn downlink_power_allocation(
    inst: &ProblemInstance,
    w_bar: &BeamformingMatrix,
    gamma: f64,
) -> Result<PowerAllocation> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidInstance(format!(
            "target SINR must be positive, got {gamma}"
        )));
    }
    let gains = crate::model::gain_matrix(inst, w_bar)?;
    let k = inst.users();
    let m = DMatrix::from_fn(k, k, |r, c| {
        if r == c {
            gains[(r, c)]
        } else {
            -gamma * gains[(r, c)]
        }
    });
    let rhs = DVector::from_element(k, gamma * inst.noise_power());
    let p = m.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    if let Some(user) = p.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::NegativePower { user });
    }
    Ok(PowerAllocation { p })
}

/// `W <- c W`, `c = sqrt(min_n P_n / p_n(W))`: the tightest antenna ends up
/// exactly at its budget.
pub fn regulate(w: &BeamformingMatrix, budget: &DVector<f64>) -> Result<BeamformingMatrix> {
    if budget.len() != w.antennas() {
        return Err(Error::DimensionMismatch(format!(
            "budget has {} entries, W has {} rows",
            budget.len(),
            w.antennas()
        )));
    }
    let ratio = per_antenna_powers(w)
        .iter()
        .zip(budget.iter())
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, cap)| cap / p)
        .fold(f64::INFINITY, f64::min);
    if !ratio.is_finite() {
        return Err(Error::ZeroBeamformer);
    }
    Ok(w.scaled(ratio.sqrt()))
}

/// `W = W_bar diag(sqrt(p))`.
pub fn apply_powers(w_bar: &BeamformingMatrix, alloc: &PowerAllocation) -> BeamformingMatrix {
    let mut w = w_bar.entries().clone();
    for (k, &pk) in alloc.p.iter().enumerate() {
        let s = Complex64::new(pk.sqrt(), 0.0);
        w.column_mut(k).iter_mut().for_each(|z| *z *= s);
    }
    BeamformingMatrix::new(w)
}

/// Shared tail of both pipelines: MMSE directions, balanced powers,
/// regulation.
pub(crate) fn assemble(
    inst: &ProblemInstance,
    dual: &DualVariables,
    gamma: f64,
    config: &SolverConfig,
) -> Result<(BeamformingMatrix, BeamformingMatrix, f64, usize)> {
    let w_bar = uplink_mmse_beamformers(inst, dual, config.ridge)?;
    let mut target = gamma;
    let mut fallbacks = 0;
    let alloc = loop {
        match downlink_power_allocation(inst, &w_bar, target) {
            Ok(a) => break a,
            Err(Error::NegativePower { .. } | Error::SingularSystem)
                if fallbacks < FALLBACK_RETRIES =>
            {
                fallbacks += 1;
                target *= FALLBACK_FACTOR;
            }
            Err(e) => return Err(e),
        }
    };
    let unregulated = apply_powers(&w_bar, &alloc);
    let w = regulate(&unregulated, inst.power_budget())?;
    Ok((w, unregulated, target, fallbacks))
}

/// Recovery from a predicted `(lambda, mu)` pair.
///
/// Both vectors are renormalized first; the size of that adjustment is
/// reported in [`Recovery::renormalization`].
pub fn recover_from_lambda_mu(
    inst: &ProblemInstance,
    dual: &DualVariables,
    config: &SolverConfig,
) -> Result<Recovery> {
    dual.check_shape(inst)?;
    if dual
        .lambda
        .iter()
        .chain(dual.mu.iter())
        .any(|&x| !(x >= 0.0) || !x.is_finite())
    {
        return Err(Error::InvalidInstance(
            "dual variables must be finite and nonnegative".into(),
        ));
    }
    let (l, m) = dual.normalization_sums(inst);
    let renormalization = (l - 1.0).abs().max((m - 1.0).abs());
    let dual = dual.normalized(inst)?;
    let gamma = gamma_from_beta(&compute_beta(inst, &dual, config.ridge)?);
    finish(inst, dual, gamma, renormalization, config)
}

/// Recovery from a predicted `mu` alone; `lambda` is re-optimized.
pub fn recover_from_mu(
    inst: &ProblemInstance,
    mu: &DVector<f64>,
    config: &SolverConfig,
) -> Result<Recovery> {
    if mu.len() != inst.antennas() {
        return Err(Error::DimensionMismatch(format!(
            "mu has {} entries, instance has {} antennas",
            mu.len(),
            inst.antennas()
        )));
    }
    if mu.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInstance(
            "mu must be finite and nonnegative".into(),
        ));
    }
    let s = mu.dot(inst.power_budget());
    let deviation = (s - 1.0).abs();
    if deviation > MU_RENORMALIZE_SLACK {
        return Err(Error::MuNotNormalized(deviation));
    }
    let mu = mu / s;
    let inner = fixed_point_balance(inst, &mu, config)?;
    let dual = DualVariables::new(inner.lambda, mu);
    let gamma = gamma_from_beta(&compute_beta(inst, &dual, config.ridge)?);
    finish(inst, dual, gamma, deviation, config)
}

fn finish(
    inst: &ProblemInstance,
    dual: DualVariables,
    gamma: f64,
    renormalization: f64,
    config: &SolverConfig,
) -> Result<Recovery> {
    let (w, unregulated, gamma_target, fallbacks) = assemble(inst, &dual, gamma, config)?;
    let achieved = min_sinr(inst, &w)?;
    Ok(Recovery {
        w,
        unregulated,
        gamma: achieved,
        gamma_target,
        dual,
        renormalization,
        fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{rayleigh_channels, ChannelRng};
    use crate::linalg::CMatrix;
    use crate::model::sinr_per_user;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn allocation_without_interference() {
        let inst = ProblemInstance::with_uniform_power(CMatrix::identity(2, 2), 1.0, 1.0).unwrap();
        let w = BeamformingMatrix::new(CMatrix::identity(2, 2));
        let a = downlink_power_allocation(&inst, &w, 1.0).unwrap();
        assert_eq!(a.p.as_slice(), &[1.0, 1.0]);

        let h = CMatrix::from_row_slice(1, 1, &[c(2.0)]);
        let inst = ProblemInstance::with_uniform_power(h, 1.0, 1.0).unwrap();
        let w = BeamformingMatrix::new(CMatrix::from_row_slice(1, 1, &[c(1.0)]));
        let a = downlink_power_allocation(&inst, &w, 8.0).unwrap();
        assert!((a.p[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn allocation_balances_random_pair() {
        let h = rayleigh_channels(2, 3, &mut ChannelRng::new(21, 0));
        let inst = ProblemInstance::with_uniform_power(h, 1.0, 1.0).unwrap();
        let d = DualVariables::new(dv(&[0.5, 0.5]), dv(&[1.0 / 3.0; 3]));
        let w_bar = uplink_mmse_beamformers(&inst, &d, 1e-12).unwrap();
        let gamma = 0.8;
        let a = downlink_power_allocation(&inst, &w_bar, gamma).unwrap();
        let s = sinr_per_user(&inst, &apply_powers(&w_bar, &a)).unwrap();
        for k in 0..2 {
            assert!((s[k] - gamma).abs() <= 1e-8 * gamma);
        }
    }

    #[test]
    fn allocation_rejects_infeasible_target() {
        // identical channels cannot both reach SINR 2 with the same direction
        let h = CMatrix::from_row_slice(2, 1, &[c(1.0), c(1.0)]);
        let inst = ProblemInstance::with_uniform_power(h, 1.0, 1.0).unwrap();
        let w = BeamformingMatrix::new(CMatrix::from_row_slice(1, 2, &[c(1.0), c(1.0)]));
        assert!(matches!(
            downlink_power_allocation(&inst, &w, 2.0),
            Err(Error::NegativePower { .. } | Error::SingularSystem)
        ));
    }

    #[test]
    fn regulate_scales_down_and_up() {
        let budget = dv(&[1.0, 1.0]);
        let w = BeamformingMatrix::new(CMatrix::from_row_slice(2, 1, &[c(2f64.sqrt()), c(1.0)]));
        let r = regulate(&w, &budget).unwrap();
        let p = per_antenna_powers(&r);
        assert!((p[0] - 1.0).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        let w = BeamformingMatrix::new(CMatrix::from_row_slice(
            2,
            1,
            &[c(0.5f64.sqrt()), c(0.5f64.sqrt())],
        ));
        let r = regulate(&w, &budget).unwrap();
        let p = per_antenna_powers(&r);
        assert!((p[0] - 1.0).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);

        let zero = BeamformingMatrix::new(CMatrix::zeros(2, 2));
        assert!(matches!(
            regulate(&zero, &budget),
            Err(Error::ZeroBeamformer)
        ));
    }

    #[test]
    fn regulation_improves_min_sinr_iff_scaled_up() {
        let h = rayleigh_channels(3, 3, &mut ChannelRng::new(4, 0));
        let inst = ProblemInstance::with_uniform_power(h, 1.0, 1.0).unwrap();
        for seed in 0..20 {
            let w = BeamformingMatrix::new(rayleigh_channels(3, 3, &mut ChannelRng::new(seed, 1)));
            let scale = (per_antenna_powers(&w).max()).recip();
            for s in [0.3, 3.0] {
                let w = w.scaled((scale * s).sqrt());
                let before = min_sinr(&inst, &w).unwrap();
                let after = min_sinr(&inst, &regulate(&w, inst.power_budget()).unwrap()).unwrap();
                let c = (1.0 / s).sqrt();
                assert_eq!(after >= before, c >= 1.0, "seed {seed} s {s}");
            }
        }
    }

    fn single_user() -> ProblemInstance {
        ProblemInstance::with_uniform_power(CMatrix::from_row_slice(1, 1, &[c(1.0)]), 10.0, 1.0)
            .unwrap()
    }

    #[test]
    fn lambda_mu_single_user_optimum() {
        let inst = single_user();
        let cfg = SolverConfig::default();
        let r = recover_from_lambda_mu(&inst, &DualVariables::new(dv(&[1.0]), dv(&[0.1])), &cfg)
            .unwrap();
        assert!((r.w.entries()[(0, 0)].norm() - 10f64.sqrt()).abs() < 1e-12);
        assert!((r.gamma - 10.0).abs() < 1e-9);
        let m = recover_from_mu(&inst, &dv(&[0.1]), &cfg).unwrap();
        assert!((m.gamma - r.gamma).abs() < 1e-12);
        assert!((m.w.entries() - r.w.entries()).norm() < 1e-12);
    }

    #[test]
    fn orthogonal_optimum() {
        let p = 5.0;
        let inst = ProblemInstance::with_uniform_power(CMatrix::identity(2, 2), p, 1.0).unwrap();
        let cfg = SolverConfig::default();
        let d = DualVariables::new(dv(&[0.5, 0.5]), dv(&[0.1, 0.1]));
        for r in [
            recover_from_lambda_mu(&inst, &d, &cfg).unwrap(),
            recover_from_mu(&inst, &dv(&[0.1, 0.1]), &cfg).unwrap(),
        ] {
            assert!((r.gamma - p).abs() < 1e-9 * p);
            let expected = CMatrix::identity(2, 2) * c(p.sqrt());
            assert!((r.w.entries() - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn mu_normalization_policy() {
        let inst = ProblemInstance::with_uniform_power(CMatrix::identity(2, 2), 1.0, 1.0).unwrap();
        let cfg = SolverConfig::default();
        let r = recover_from_mu(&inst, &dv(&[0.502, 0.502]), &cfg).unwrap();
        assert!((r.renormalization - 0.004).abs() < 1e-12);
        assert!(matches!(
            recover_from_mu(&inst, &dv(&[0.6, 0.6]), &cfg),
            Err(Error::MuNotNormalized(_))
        ));
        assert!(recover_from_mu(&inst, &dv(&[0.5]), &cfg).is_err());
    }

    #[test]
    fn recovered_beamformers_balance_and_saturate() {
        let cfg = SolverConfig::default();
        for seed in 0..30 {
            let h = rayleigh_channels(4, 4, &mut ChannelRng::new(seed, 0));
            let inst = ProblemInstance::with_uniform_power(h, 10.0, 1.0).unwrap();
            let mu = DVector::from_element(4, 1.0 / 40.0);
            let r = recover_from_mu(&inst, &mu, &cfg).unwrap();
            let s = sinr_per_user(&inst, &r.unregulated).unwrap();
            let spread = (s.max() - s.min()) / s.max();
            assert!(spread <= 1e-6, "seed {seed}: spread {spread}");
            let ratio = r.w.max_power_ratio(inst.power_budget());
            assert!((ratio - 1.0).abs() <= 1e-9, "seed {seed}: ratio {ratio}");

            // same mu, a non-optimal lambda: its balanced level is never higher
            let lam = DVector::from_fn(4, |k, _| 1.0 + k as f64);
            let alt =
                recover_from_lambda_mu(&inst, &DualVariables::new(lam, mu.clone()), &cfg).unwrap();
            assert!(
                alt.gamma_target <= r.gamma_target * (1.0 + 1e-9),
                "seed {seed}"
            );
        }
    }
}
