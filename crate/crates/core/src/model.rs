//! Problem and solution data model shared by every solver.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, DEFAULT_RIDGE};

/// Tolerance used when checking the dual normalizations.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// One downlink SINR-balancing problem.
///
/// `channels` is `K x N_t`; row `k` is `h_k^T`. Powers are linear and
/// normalized by the noise power wherever the caller wants that convention.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    channels: CMatrix,
    power_budget: DVector<f64>,
    noise_power: f64,
}

impl ProblemInstance {
    pub fn new(channels: CMatrix, power_budget: DVector<f64>, noise_power: f64) -> Result<Self> {
        let (k, nt) = channels.shape();
        if k == 0 || nt == 0 {
            return Err(Error::InvalidInstance(
                "K and N_t must be at least 1".into(),
            ));
        }
        if power_budget.len() != nt {
            return Err(Error::DimensionMismatch(format!(
                "power budget has {} entries, channel has {nt} antennas",
                power_budget.len()
            )));
        }
        if power_budget.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidInstance(
                "every P_n must be positive and finite".into(),
            ));
        }
        if !(noise_power > 0.0 && noise_power.is_finite()) {
            return Err(Error::InvalidInstance(
                "N0 must be positive and finite".into(),
            ));
        }
        if channels
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::InvalidInstance(
                "channel contains non-finite entries".into(),
            ));
        }
        Ok(Self {
            channels,
            power_budget,
            noise_power,
        })
    }

    /// Same budget `p` on every antenna.
    pub fn with_uniform_power(channels: CMatrix, p: f64, noise_power: f64) -> Result<Self> {
        let nt = channels.ncols();
        Self::new(channels, DVector::from_element(nt, p), noise_power)
    }

    pub fn users(&self) -> usize {
        self.channels.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.channels.ncols()
    }

    pub fn channels(&self) -> &CMatrix {
        &self.channels
    }

    pub fn power_budget(&self) -> &DVector<f64> {
        &self.power_budget
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    /// `h_k^*` as a column vector.
    pub fn channel_conj(&self, k: usize) -> nalgebra::DVector<Complex64> {
        self.channels.row(k).transpose().map(|z| z.conj())
    }

    /// `h_k^T w`.
    pub fn gain(&self, k: usize, w: nalgebra::DVectorView<'_, Complex64>) -> Complex64 {
        self.channels
            .row(k)
            .iter()
            .zip(w.iter())
            .map(|(h, x)| h * x)
            .sum()
    }
}

/// Downlink beamforming matrix `W` (`N_t x K`, column `k` is `w_k`).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingMatrix(pub CMatrix);

impl BeamformingMatrix {
    pub fn new(entries: CMatrix) -> Self {
        Self(entries)
    }

    pub fn entries(&self) -> &CMatrix {
        &self.0
    }

    pub fn antennas(&self) -> usize {
        self.0.nrows()
    }

    pub fn users(&self) -> usize {
        self.0.ncols()
    }

    pub fn per_antenna_powers(&self) -> DVector<f64> {
        per_antenna_powers(self)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.map(|z| z * c))
    }

    /// Largest `p_n / P_n` over antennas.
    pub fn max_power_ratio(&self, budget: &DVector<f64>) -> f64 {
        self.per_antenna_powers()
            .iter()
            .zip(budget.iter())
            .map(|(p, cap)| p / cap)
            .fold(0.0, f64::max)
    }
}

/// Dual variables of the SINR-balancing problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariables {
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
}

impl DualVariables {
    pub fn new(lambda: DVector<f64>, mu: DVector<f64>) -> Self {
        Self { lambda, mu }
    }

    /// `(sum_k lambda_k N0, sum_n mu_n P_n)`.
    pub fn normalization_sums(&self, inst: &ProblemInstance) -> (f64, f64) {
        let l = self.lambda.sum() * inst.noise_power();
        let m = self.mu.dot(inst.power_budget());
        (l, m)
    }

    pub fn is_normalized(&self, inst: &ProblemInstance) -> bool {
        let (l, m) = self.normalization_sums(inst);
        (l - 1.0).abs() <= NORMALIZATION_TOL && (m - 1.0).abs() <= NORMALIZATION_TOL
    }

    /// Rescales both vectors onto their normalization hyperplanes.
    pub fn normalized(&self, inst: &ProblemInstance) -> Result<Self> {
        let (l, m) = self.normalization_sums(inst);
        if !(l > 0.0) || !(m > 0.0) {
            return Err(Error::AllZero);
        }
        Ok(Self {
            lambda: &self.lambda / l,
            mu: &self.mu / m,
        })
    }

    pub fn check_shape(&self, inst: &ProblemInstance) -> Result<()> {
        if self.lambda.len() != inst.users() || self.mu.len() != inst.antennas() {
            return Err(Error::DimensionMismatch(format!(
                "dual has |lambda| = {}, |mu| = {}; instance has K = {}, N_t = {}",
                self.lambda.len(),
                self.mu.len(),
                inst.users(),
                inst.antennas()
            )));
        }
        Ok(())
    }
}

/// Step-size schedule of the outer price update `mu <- P(mu + alpha p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `alpha_j = step_size_base * 2^-j`, every step accepted.
    Geometric,
    /// Start at `alpha = initial_relative * ||mu|| / ||p||`; a trial point
    /// is kept only if it lowers the dual bound, otherwise `alpha` halves.
    Backtracking { initial_relative: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking {
            initial_relative: 1.0,
        }
    }
}

/// Tolerances and iteration budgets for the iterative solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub step_rule: StepRule,
    /// Base of the geometric schedule.
    pub step_size_base: f64,
    pub bisection_tol: f64,
    pub ridge: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_outer_iters: 200,
            max_inner_iters: 10_000,
            step_rule: StepRule::default(),
            step_size_base: 0.01,
            bisection_tol: 1e-10,
            ridge: DEFAULT_RIDGE,
        }
    }
}

impl SolverConfig {
    /// The plain geometric schedule `alpha_j = 0.01 * 2^-j`.
    pub fn geometric() -> Self {
        Self {
            step_rule: StepRule::Geometric,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.rel_tol < 1.0
            && self.max_outer_iters > 0
            && self.max_inner_iters > 0
            && self.step_size_base > 0.0
            && self.bisection_tol > 0.0
            && self.ridge > 0.0
            && match self.step_rule {
                StepRule::Geometric => true,
                StepRule::Backtracking { initial_relative } => initial_relative > 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInstance(format!(
                "invalid solver config {self:?}"
            )))
        }
    }
}

fn check_w(inst: &ProblemInstance, w: &BeamformingMatrix) -> Result<()> {
    if w.antennas() != inst.antennas() || w.users() != inst.users() {
        return Err(Error::DimensionMismatch(format!(
            "W is {}x{}, expected {}x{}",
            w.antennas(),
            w.users(),
            inst.antennas(),
            inst.users()
        )));
    }
    Ok(())
}

/// `|h_k^T w_i|^2` for every (k, i); row index is the receiving user.
pub fn gain_matrix(
    inst: &ProblemInstance,
    w: &BeamformingMatrix,
) -> Result<nalgebra::DMatrix<f64>> {
    check_w(inst, w)?;
    Ok((inst.channels() * w.entries()).map(|z| z.norm_sqr()))
}

/// Downlink SINR of every user.
pub fn sinr_per_user(inst: &ProblemInstance, w: &BeamformingMatrix) -> Result<DVector<f64>> {
    let g = gain_matrix(inst, w)?;
    let k = inst.users();
    Ok(DVector::from_fn(k, |u, _| {
        let interference: f64 = (0..k).filter(|&i| i != u).map(|i| g[(u, i)]).sum();
        g[(u, u)] / (interference + inst.noise_power())
    }))
}

/// `p_n = ||W(n, :)||^2`.
pub fn per_antenna_powers(w: &BeamformingMatrix) -> DVector<f64> {
    DVector::from_fn(w.antennas(), |n, _| {
        w.0.row(n).iter().map(|z| z.norm_sqr()).sum()
    })
}

pub fn min_sinr(inst: &ProblemInstance, w: &BeamformingMatrix) -> Result<f64> {
    Ok(sinr_per_user(inst, w)?.min())
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}
