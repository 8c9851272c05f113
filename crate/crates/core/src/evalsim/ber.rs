//! Gray-mapped QPSK through the multiuser downlink.
//!
//! User `k` receives `y_k = h_k^T sum_i w_i s_i + n_k` with unit-energy
//! symbols and `n_k ~ CN(0, N0)`, and detects coherently by dividing by the
//! effective gain `h_k^T w_k` and taking the sign of each quadrature.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use statrs::function::erf::erfc;

use crate::channel::ChannelRng;
use crate::linalg::CMatrix;
use crate::model::{BeamformingMatrix, ProblemInstance};

/// Gaussian tail `Q(x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Bit-error counts per user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitErrors {
    pub errors: Vec<u64>,
    /// Bits sent to each user.
    pub bits: u64,
}

impl BitErrors {
    pub fn empty(users: usize) -> Self {
        Self {
            errors: vec![0; users],
            bits: 0,
        }
    }

    pub fn merge(&mut self, other: &BitErrors) {
        for (a, b) in self.errors.iter_mut().zip(&other.errors) {
            *a += b;
        }
        self.bits += other.bits;
    }

    pub fn rates(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.errors.len(),
            self.errors.iter().map(|&e| e as f64 / self.bits as f64),
        )
    }
}

/// Runs `n_symbols` QPSK symbol periods through channel `h` (`K x N_t`)
/// with beamformer `w` (`N_t x K`).
pub fn count_bit_errors(
    h: &CMatrix,
    w: &CMatrix,
    noise_power: f64,
    n_symbols: usize,
    rng: &mut ChannelRng,
) -> BitErrors {
    let k = h.nrows();
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let effective = h * w;
    let noise_scale = noise_power.sqrt();
    let mut out = BitErrors::empty(k);
    let mut bits = vec![(false, false); k];
    let mut s = vec![Complex64::new(0.0, 0.0); k];
    for _ in 0..n_symbols {
        for u in 0..k {
            let b: (bool, bool) = (rng.random(), rng.random());
            bits[u] = b;
            s[u] = Complex64::new(if b.0 { -a } else { a }, if b.1 { -a } else { a });
        }
        for u in 0..k {
            let mut y = rng.complex_gaussian() * noise_scale;
            for i in 0..k {
                y += effective[(u, i)] * s[i];
            }
            let g = effective[(u, u)];
            let z = if g.norm_sqr() > 0.0 { y / g } else { y };
            out.errors[u] +=
                u64::from((z.re < 0.0) != bits[u].0) + u64::from((z.im < 0.0) != bits[u].1);
        }
    }
    out.bits = 2 * n_symbols as u64;
    out
}

/// Per-user bit error rate.
pub fn ber_qpsk(
    inst: &ProblemInstance,
    w: &BeamformingMatrix,
    n_symbols: usize,
    rng: &mut ChannelRng,
) -> DVector<f64> {
    count_bit_errors(
        inst.channels(),
        w.entries(),
        inst.noise_power(),
        n_symbols,
        rng,
    )
    .rates()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::from_db;

    fn scalar(gain: f64) -> (ProblemInstance, BeamformingMatrix) {
        let h = CMatrix::from_row_slice(1, 1, &[Complex64::new(1.0, 0.0)]);
        let inst = ProblemInstance::with_uniform_power(h, 1.0, 1.0).unwrap();
        let w = BeamformingMatrix::new(CMatrix::from_row_slice(
            1,
            1,
            &[Complex64::new(gain.sqrt(), 0.0)],
        ));
        (inst, w)
    }

    #[test]
    fn q_function_values() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        assert!((q_function(10f64.sqrt()) - 7.827e-4).abs() < 1e-6);
    }

    #[test]
    fn matches_q_oracle_at_sinr_10() {
        let (inst, w) = scalar(10.0);
        let n = 400_000;
        let ber = ber_qpsk(&inst, &w, n, &mut ChannelRng::new(1, 3))[0];
        let p = q_function(10f64.sqrt());
        let sd = (p * (1.0 - p) / (2 * n) as f64).sqrt();
        assert!((ber - p).abs() <= 3.0 * sd, "{ber} vs {p}");
    }

    #[test]
    fn zero_power_is_a_coin_flip() {
        let (inst, _) = scalar(1.0);
        let w = BeamformingMatrix::new(CMatrix::zeros(1, 1));
        let n = 100_000;
        let ber = ber_qpsk(&inst, &w, n, &mut ChannelRng::new(2, 3))[0];
        assert!((ber - 0.5).abs() <= 3.0 * (0.25 / (2 * n) as f64).sqrt());
    }

    #[test]
    fn orthogonal_high_power_is_error_free() {
        let inst = ProblemInstance::with_uniform_power(CMatrix::identity(2, 2), from_db(30.0), 1.0)
            .unwrap();
        let w = BeamformingMatrix::new(
            CMatrix::identity(2, 2) * Complex64::new(from_db(30.0).sqrt(), 0.0),
        );
        let ber = ber_qpsk(&inst, &w, 100_000, &mut ChannelRng::new(4, 3));
        assert!(ber.iter().all(|&b| b <= 1e-6));
    }

    #[test]
    fn counts_merge_additively() {
        let (inst, w) = scalar(1.0);
        let mut a = count_bit_errors(
            inst.channels(),
            w.entries(),
            1.0,
            10,
            &mut ChannelRng::new(1, 0),
        );
        let b = count_bit_errors(
            inst.channels(),
            w.entries(),
            1.0,
            30,
            &mut ChannelRng::new(2, 0),
        );
        let before = a.errors[0];
        a.merge(&b);
        assert_eq!(a.bits, 80);
        assert_eq!(a.errors[0], before + b.errors[0]);
    }
}
