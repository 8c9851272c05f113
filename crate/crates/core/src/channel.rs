//! Channel generation: i.i.d. Rayleigh draws, CSI-error injection, and
//! first-order Gauss-Markov time evolution.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// Purpose tags for per-record RNG streams.
pub mod purpose {
    pub const CHANNEL: u64 = 0;
    pub const CSI_ERROR: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const SYMBOLS: u64 = 3;
    pub const EVOLUTION: u64 = 4;
    pub const SURROGATE: u64 = 5;
}

/// Deterministic random stream keyed by `(seed, stream_id)`.
///
/// Draws are reproducible bit-for-bit for a fixed key, independent of how
/// many other streams exist or in which order they are consumed.
#[derive(Debug, Clone)]
pub struct ChannelRng {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl ChannelRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Stream for `(index, purpose)`: one per record and per use.
    pub fn for_record(seed: u64, index: u64, purpose: u64) -> Self {
        Self::new(seed, index.wrapping_mul(16).wrapping_add(purpose))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One circularly-symmetric complex Gaussian with unit variance.
    pub fn complex_gaussian(&mut self) -> Complex64 {
        let re: f64 = StandardNormal.sample(&mut self.rng);
        let im: f64 = StandardNormal.sample(&mut self.rng);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> CMatrix {
        // row-major fill so the draw order is independent of storage order
        let mut m = CMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.complex_gaussian();
            }
        }
        m
    }
}

impl rand::RngCore for ChannelRng {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `K x N_t` matrix of i.i.d. CN(0, 1) entries.
pub fn rayleigh_channels(k: usize, nt: usize, rng: &mut ChannelRng) -> CMatrix {
    rng.gaussian_matrix(k, nt)
}

/// `h_bar + sigma * E` with `E` i.i.d. CN(0, 1).
pub fn perturb_csi(h_bar: &CMatrix, sigma: f64, rng: &mut ChannelRng) -> Result<CMatrix> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidInstance(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(h_bar.clone());
    }
    let e = rng.gaussian_matrix(h_bar.nrows(), h_bar.ncols());
    Ok(h_bar + e * Complex64::new(sigma, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvolutionParams {
    /// Per-step correlation coefficient in `[0, 1]`.
    pub correlation: f64,
    pub step_seconds: f64,
}

impl EvolutionParams {
    pub fn new(correlation: f64, step_seconds: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&correlation) {
            return Err(Error::InvalidInstance(format!(
                "correlation must lie in [0, 1], got {correlation}"
            )));
        }
        if !(step_seconds > 0.0) {
            return Err(Error::InvalidInstance(
                "step_seconds must be positive".into(),
            ));
        }
        Ok(Self {
            correlation,
            step_seconds,
        })
    }

    /// Per-step correlation such that the channel decorrelates to `target`
    /// after `span_seconds`.
    pub fn from_span(target: f64, span_seconds: f64, step_seconds: f64) -> Result<Self> {
        let steps = span_seconds / step_seconds;
        Self::new(target.powf(1.0 / steps), step_seconds)
    }

    /// Correlation between channel snapshots `seconds` apart.
    pub fn correlation_after(&self, seconds: f64) -> f64 {
        self.correlation.powf(seconds / self.step_seconds)
    }

    /// Jakes-style mapping `rho = J0(2 pi f_d dt)`, clamped to `[0, 1]`.
    pub fn jakes(doppler_hz: f64, step_seconds: f64) -> Result<Self> {
        let rho = bessel_j0(std::f64::consts::TAU * doppler_hz * step_seconds);
        Self::new(rho.clamp(0.0, 1.0), step_seconds)
    }
}

/// `J0(x) = (1/pi) * int_0^pi cos(x sin t) dt`, composite Simpson.
pub fn bessel_j0(x: f64) -> f64 {
    let n = 2000;
    let h = std::f64::consts::PI / n as f64;
    let f = |t: f64| (x * t.sin()).cos();
    let mut acc = f(0.0) + f(std::f64::consts::PI);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0 / std::f64::consts::PI
}

/// One AR(1) step: `h' = rho h + sqrt(1 - rho^2) E`.
pub fn evolve(h: &CMatrix, params: &EvolutionParams, rng: &mut ChannelRng) -> CMatrix {
    let rho = params.correlation;
    if rho == 1.0 {
        return h.clone();
    }
    let innovation = rng.gaussian_matrix(h.nrows(), h.ncols());
    let s = (1.0 - rho * rho).sqrt();
    h.map(|z| z * rho) + innovation * Complex64::new(s, 0.0)
}
