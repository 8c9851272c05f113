//! Virtual-uplink SINR balancing for a fixed antenna price vector `mu`.
//!
//! For fixed `mu` the uplink noise covariance is `Diag(mu)` and the users
//! share the total power `1 / N0`. The balanced SINR is found by the
//! normalized fixed-point iteration
//!
//! ```text
//! lambda_k <- eta / (h_k^T G_k^-1 h_k^*),   eta = 1 / (N0 sum_i 1 / (h_i^T G_i^-1 h_i^*))
//! ```
//!
//! whose balanced SINR `gamma^(j) = min_k lambda_k h_k^T G_k^-1 h_k^*` is
//! non-decreasing in `j`.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{herm_solve_vec, CMatrix, CVector};
use crate::model::{BeamformingMatrix, DualVariables, ProblemInstance, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceResult {
    /// Uplink powers, normalized so that `sum_k lambda_k N0 = 1`.
    pub lambda: DVector<f64>,
    /// Balanced uplink SINR for `lambda`.
    pub gamma: f64,
    pub iterations: usize,
    /// Balanced SINR after each update; entry 0 is the initial point.
    pub gamma_trace: Vec<f64>,
    /// False when the iteration cap was hit before `rel_tol` was met.
    pub converged: bool,
}

/// `G(lambda, mu) = sum_i lambda_i h_i^* h_i^T + Diag(mu)`.
pub fn build_g(inst: &ProblemInstance, dual: &DualVariables) -> Result<CMatrix> {
    dual.check_shape(inst)?;
    Ok(gram(inst, &dual.lambda, &dual.mu, None))
}

/// `G_k`: the same sum with user `k` left out.
pub fn build_g_k(inst: &ProblemInstance, dual: &DualVariables, k: usize) -> Result<CMatrix> {
    dual.check_shape(inst)?;
    if k >= inst.users() {
        return Err(Error::DimensionMismatch(format!("user {k} out of range")));
    }
    Ok(gram(inst, &dual.lambda, &dual.mu, Some(k)))
}

fn gram(
    inst: &ProblemInstance,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
    skip: Option<usize>,
) -> CMatrix {
    let h = inst.channels();
    let nt = inst.antennas();
    let mut g = CMatrix::zeros(nt, nt);
    for n in 0..nt {
        g[(n, n)] = Complex64::new(mu[n], 0.0);
    }
    for (i, &li) in lambda.iter().enumerate() {
        if Some(i) == skip || li == 0.0 {
            continue;
        }
        for r in 0..nt {
            let hr = h[(i, r)].conj() * li;
            for c in 0..nt {
                g[(r, c)] += hr * h[(i, c)];
            }
        }
    }
    g
}

/// `h_k^T A^-1 h_k^*` together with `A^-1 h_k^*`.
fn quad_form(inst: &ProblemInstance, a: &CMatrix, k: usize, ridge: f64) -> Result<(f64, CVector)> {
    let hc = inst.channel_conj(k);
    let x = herm_solve_vec(a, &hc, ridge).map_err(|_| Error::SingularG { user: Some(k) })?;
    let q: Complex64 = inst
        .channels()
        .row(k)
        .iter()
        .zip(x.iter())
        .map(|(h, v)| h * v)
        .sum();
    Ok((q.re, x))
}

/// `a_k = h_k^T G_k^-1 h_k^*` for every user.
fn leave_one_out_gains(
    inst: &ProblemInstance,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>> {
    let mut a = DVector::zeros(inst.users());
    for k in 0..inst.users() {
        let gk = gram(inst, lambda, mu, Some(k));
        let (q, _) = quad_form(inst, &gk, k, ridge)?;
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::SingularG { user: Some(k) });
        }
        a[k] = q;
    }
    Ok(a)
}

fn balanced(lambda: &DVector<f64>, a: &DVector<f64>) -> f64 {
    lambda.component_mul(a).min()
}

/// Solves the inner balancing problem for fixed `mu`.
pub fn fixed_point_balance(
    inst: &ProblemInstance,
    mu: &DVector<f64>,
    config: &SolverConfig,
) -> Result<BalanceResult> {
    let k = inst.users();
    if mu.len() != inst.antennas() {
        return Err(Error::DimensionMismatch(format!(
            "mu has {} entries, instance has {} antennas",
            mu.len(),
            inst.antennas()
        )));
    }
    if mu.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
        return Err(Error::InvalidInstance(
            "mu must be finite and nonnegative".into(),
        ));
    }
    let n0 = inst.noise_power();

    let mut lambda = DVector::from_element(k, 1.0 / (k as f64 * n0));
    let mut a = leave_one_out_gains(inst, &lambda, mu, config.ridge)?;
    let mut gamma = balanced(&lambda, &a);
    let mut trace = vec![gamma];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_inner_iters {
        iterations += 1;
        // the seed gamma cancels in the normalization below
        let aux = a.map(|ak| gamma / ak);
        let eta = 1.0 / (aux.sum() * n0);
        lambda = aux * eta;
        a = leave_one_out_gains(inst, &lambda, mu, config.ridge)?;
        let next = balanced(&lambda, &a);
        trace.push(next);
        let change = (next - gamma).abs() / gamma.abs().max(f64::MIN_POSITIVE);
        gamma = next;
        if change <= config.rel_tol {
            converged = true;
            break;
        }
    }

    Ok(BalanceResult {
        lambda,
        gamma,
        iterations,
        gamma_trace: trace,
        converged,
    })
}

/// `beta_k = 1 / (lambda_k h_k^T G^-1 h_k^*)`; `+inf` where `lambda_k = 0`.
pub fn compute_beta(
    inst: &ProblemInstance,
    dual: &DualVariables,
    ridge: f64,
) -> Result<DVector<f64>> {
    let g = build_g(inst, dual)?;
    let mut beta = DVector::zeros(inst.users());
    for k in 0..inst.users() {
        let lk = dual.lambda[k];
        if lk == 0.0 {
            beta[k] = f64::INFINITY;
            continue;
        }
        let (q, _) = quad_form(inst, &g, k, ridge)?;
        beta[k] = 1.0 / (lk * q);
    }
    Ok(beta)
}

/// `min_k 1 / (beta_k - 1)`, with users at `beta_k = +inf` contributing zero.
pub fn gamma_from_beta(beta: &DVector<f64>) -> f64 {
    beta.iter()
        .map(|&b| {
            if b.is_infinite() {
                0.0
            } else {
                1.0 / (b - 1.0)
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Unit-norm MMSE receive filters `G_k^-1 h_k^* / ||G_k^-1 h_k^*||`.
pub fn uplink_mmse_beamformers(
    inst: &ProblemInstance,
    dual: &DualVariables,
    ridge: f64,
) -> Result<BeamformingMatrix> {
    dual.check_shape(inst)?;
    let nt = inst.antennas();
    let mut w = CMatrix::zeros(nt, inst.users());
    for k in 0..inst.users() {
        let gk = gram(inst, &dual.lambda, &dual.mu, Some(k));
        let (_, x) = quad_form(inst, &gk, k, ridge)?;
        let norm = x.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::SingularG { user: Some(k) });
        }
        w.set_column(k, &(x / Complex64::new(norm, 0.0)));
    }
    Ok(BeamformingMatrix::new(w))
}

/// Uplink SINR of user `k` for receive filter `w` (column of `filters`),
/// evaluated term by term.
pub fn uplink_sinr(
    inst: &ProblemInstance,
    dual: &DualVariables,
    filters: &BeamformingMatrix,
) -> DVector<f64> {
    let k = inst.users();
    DVector::from_fn(k, |u, _| {
        let w = filters.entries().column(u);
        let proj = |i: usize| -> f64 {
            let hc = inst.channel_conj(i);
            let z: Complex64 = w.iter().zip(hc.iter()).map(|(a, b)| a.conj() * b).sum();
            z.norm_sqr()
        };
        let noise: f64 = w
            .iter()
            .zip(dual.mu.iter())
            .map(|(z, m)| z.norm_sqr() * m)
            .sum();
        let interference: f64 = (0..k)
            .filter(|&i| i != u)
            .map(|i| dual.lambda[i] * proj(i))
            .sum();
        dual.lambda[u] * proj(u) / (interference + noise)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{rayleigh_channels, ChannelRng};
    use crate::linalg::hermitian_residual;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn orthogonal(p: f64) -> ProblemInstance {
        ProblemInstance::with_uniform_power(CMatrix::identity(2, 2), p, 1.0).unwrap()
    }

    fn random_instance(seed: u64, k: usize, nt: usize) -> ProblemInstance {
        let h = rayleigh_channels(k, nt, &mut ChannelRng::new(seed, 0));
        ProblemInstance::with_uniform_power(h, 10.0, 1.0).unwrap()
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn g_with_zero_lambda_is_diag_mu() {
        let inst = orthogonal(1.0);
        let g = build_g(&inst, &DualVariables::new(dv(&[0.0, 0.0]), dv(&[1.0, 1.0]))).unwrap();
        assert_eq!(g, CMatrix::identity(2, 2));
    }

    #[test]
    fn g_rank_one_on_axis() {
        let h = CMatrix::from_row_slice(1, 2, &[c(1.0), c(0.0)]);
        let inst = ProblemInstance::with_uniform_power(h, 1.0, 1.0).unwrap();
        let g = build_g(&inst, &DualVariables::new(dv(&[2.0]), dv(&[1.0, 1.0]))).unwrap();
        assert_eq!(
            g,
            CMatrix::from_row_slice(2, 2, &[c(3.0), c(0.0), c(0.0), c(1.0)])
        );
    }

    #[test]
    fn g_is_hermitian_on_random_instance() {
        let inst = random_instance(3, 4, 4);
        let d = DualVariables::new(dv(&[0.3, 0.1, 0.2, 0.4]), dv(&[0.01, 0.02, 0.03, 0.04]));
        let g = build_g(&inst, &d).unwrap();
        assert!(hermitian_residual(&g) <= 1e-12);
    }

    #[test]
    fn g_k_cases() {
        let h = CMatrix::from_row_slice(1, 2, &[c(0.5), c(2.0)]);
        let single = ProblemInstance::with_uniform_power(h, 1.0, 1.0).unwrap();
        let d = DualVariables::new(dv(&[3.0]), dv(&[0.2, 0.7]));
        let g1 = build_g_k(&single, &d, 0).unwrap();
        assert_eq!(g1, CMatrix::from_diagonal(&dv(&[0.2, 0.7]).map(c)));

        let inst = orthogonal(1.0);
        let (a, b, nu) = (0.3, 0.8, 0.25);
        let d = DualVariables::new(dv(&[a, b]), dv(&[nu, nu]));
        let g1 = build_g_k(&inst, &d, 0).unwrap();
        assert_eq!(g1, CMatrix::from_diagonal(&dv(&[nu, b + nu]).map(c)));

        let inst = random_instance(8, 3, 4);
        let d = DualVariables::new(dv(&[0.3, 0.1, 0.2]), dv(&[0.01, 0.02, 0.03, 0.04]));
        let g = build_g(&inst, &d).unwrap();
        for k in 0..3 {
            let gk = build_g_k(&inst, &d, k).unwrap();
            let hc = inst.channel_conj(k);
            let outer = &hc * hc.adjoint() * c(d.lambda[k]);
            assert!(crate::linalg::frobenius(&(gk + outer - &g)) <= 1e-15);
        }
    }

    #[test]
    fn orthogonal_closed_form() {
        let inst = orthogonal(1.0);
        let r = fixed_point_balance(&inst, &dv(&[0.5, 0.5]), &SolverConfig::default()).unwrap();
        assert!((r.gamma - 1.0).abs() < 1e-12);
        assert!((r.lambda[0] - 0.5).abs() < 1e-12 && (r.lambda[1] - 0.5).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn single_user_closed_form() {
        let h = CMatrix::from_row_slice(1, 1, &[c(1.0)]);
        let inst = ProblemInstance::with_uniform_power(h, 10.0, 1.0).unwrap();
        let r = fixed_point_balance(&inst, &dv(&[0.1]), &SolverConfig::default()).unwrap();
        assert!((r.lambda[0] - 1.0).abs() < 1e-12);
        assert!((r.gamma - 10.0).abs() < 1e-12);
    }

    #[test]
    fn trace_is_non_decreasing() {
        let cfg = SolverConfig::default();
        for seed in 0..50 {
            let inst = random_instance(seed, 4, 4);
            let mu = DVector::from_element(4, 1.0 / 40.0);
            let r = fixed_point_balance(&inst, &mu, &cfg).unwrap();
            for pair in r.gamma_trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-12, "seed {seed}: {pair:?}");
            }
        }
    }

    #[test]
    fn fixed_point_residual_and_beta_identity() {
        let cfg = SolverConfig::default();
        for seed in 0..20 {
            let inst = random_instance(100 + seed, 3, 4);
            let mu = dv(&[0.01, 0.03, 0.04, 0.02]);
            let r = fixed_point_balance(&inst, &mu, &cfg).unwrap();
            assert!(r.converged);
            assert!((r.lambda.sum() * inst.noise_power() - 1.0).abs() < 1e-9);
            let dual = DualVariables::new(r.lambda.clone(), mu.clone());
            let a = leave_one_out_gains(&inst, &r.lambda, &mu, cfg.ridge).unwrap();
            let eta = 1.0 / (a.map(|x| r.gamma / x).sum() * inst.noise_power());
            for k in 0..3 {
                let resid = (r.lambda[k] - eta * r.gamma / a[k]).abs();
                assert!(resid <= 1e-6, "seed {seed} user {k}: {resid}");
            }
            // beta route versus explicit uplink SINR with the MMSE filters
            let via_beta = gamma_from_beta(&compute_beta(&inst, &dual, cfg.ridge).unwrap());
            let filters = uplink_mmse_beamformers(&inst, &dual, cfg.ridge).unwrap();
            let explicit = uplink_sinr(&inst, &dual, &filters).min();
            assert!((via_beta - r.gamma).abs() <= 1e-8 * r.gamma);
            assert!((explicit - r.gamma).abs() <= 1e-8 * r.gamma);
        }
    }

    #[test]
    fn seed_scale_cancels_in_normalization() {
        let inst = random_instance(5, 4, 4);
        let mu = DVector::from_element(4, 0.025);
        let lambda = DVector::from_element(4, 0.25);
        let a = leave_one_out_gains(&inst, &lambda, &mu, 1e-12).unwrap();
        let step = |seed: f64| {
            let aux = a.map(|x| seed / x);
            let eta = 1.0 / aux.sum();
            aux * eta
        };
        let base = step(1.0);
        for s in [1e-3, 0.7, 3.0, 1e4] {
            let other = step(s);
            for k in 0..4 {
                assert!((other[k] - base[k]).abs() <= 1e-15 * base[k].max(1.0) * 4.0);
            }
        }
    }

    #[test]
    fn beta_cases() {
        let h = CMatrix::from_row_slice(1, 1, &[c(1.0)]);
        let inst = ProblemInstance::with_uniform_power(h, 10.0, 1.0).unwrap();
        let beta = compute_beta(&inst, &DualVariables::new(dv(&[1.0]), dv(&[0.1])), 1e-12).unwrap();
        assert!((beta[0] - 1.1).abs() < 1e-12);
        assert!((gamma_from_beta(&beta) - 10.0).abs() < 1e-9);

        let inst = orthogonal(1.0);
        let beta = compute_beta(
            &inst,
            &DualVariables::new(dv(&[0.5, 0.5]), dv(&[0.5, 0.5])),
            1e-12,
        )
        .unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-12 && (beta[1] - 2.0).abs() < 1e-12);
        assert!((gamma_from_beta(&beta) - 1.0).abs() < 1e-12);

        let beta = compute_beta(
            &inst,
            &DualVariables::new(dv(&[0.0, 1.0]), dv(&[0.5, 0.5])),
            1e-12,
        )
        .unwrap();
        assert!(beta[0].is_infinite());
    }

    #[test]
    fn mmse_cases() {
        let h = CMatrix::from_row_slice(
            1,
            3,
            &[Complex64::new(1.0, 2.0), c(-0.5), Complex64::new(0.0, 1.0)],
        );
        let inst = ProblemInstance::with_uniform_power(h.clone(), 1.0, 1.0).unwrap();
        let d = DualVariables::new(dv(&[1.0]), dv(&[1.0, 1.0, 1.0]));
        let w = uplink_mmse_beamformers(&inst, &d, 1e-12).unwrap();
        let hc = inst.channel_conj(0);
        let expected = &hc / Complex64::new(hc.norm(), 0.0);
        assert!((w.entries().column(0) - expected).norm() < 1e-14);

        let inst = orthogonal(1.0);
        let w = uplink_mmse_beamformers(
            &inst,
            &DualVariables::new(dv(&[0.3, 0.7]), dv(&[0.2, 0.9])),
            1e-12,
        )
        .unwrap();
        assert_eq!(w.entries(), &CMatrix::identity(2, 2));

        let inst = random_instance(9, 4, 4);
        let d = DualVariables::new(dv(&[0.3, 0.1, 0.2, 0.4]), dv(&[0.01, 0.02, 0.03, 0.04]));
        let w = uplink_mmse_beamformers(&inst, &d, 1e-12).unwrap();
        for k in 0..4 {
            assert!((w.entries().column(k).norm() - 1.0).abs() <= 1e-12);
        }
    }
}
