//! Outer solver over the antenna prices `mu`.
//!
//! Each iteration balances the virtual uplink for the current `mu`, maps
//! the result to a downlink beamformer, and moves `mu` along the
//! per-antenna power vector before projecting back onto
//! `{mu >= 0, sum_n mu_n P_n = 1}`. Every iterate yields both a feasible
//! (regulated) primal point and a dual upper bound, so the solver reports a
//! certified bracket around the optimum.

use nalgebra::DVector;

use crate::balance::{compute_beta, fixed_point_balance, gamma_from_beta};
use crate::error::{Error, Result};
use crate::model::{
    min_sinr, per_antenna_powers, BeamformingMatrix, DualVariables, ProblemInstance, SolverConfig,
    StepRule,
};
use crate::recover::assemble;

const MAX_BRACKET_DOUBLINGS: usize = 100;
const MAX_BISECTIONS: usize = 400;
/// Backtracking gives up once `alpha ||p||` falls below this fraction of `||mu||`.
const STALL_STEP: f64 = 1e-13;
/// Relative gap still reported as converged when the step has stalled.
const STALL_GAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientResult {
    /// Feasible, regulated beamformer of the best primal iterate.
    pub w: BeamformingMatrix,
    /// Normalized dual of the same iterate.
    pub dual: DualVariables,
    /// Min-SINR of `w`.
    pub gamma_primal: f64,
    /// Smallest dual upper bound seen over all iterates.
    pub gamma_dual: f64,
    pub iterations: usize,
    /// Balanced uplink SINR `f(mu)` of every evaluated price vector, in
    /// evaluation order.
    pub gamma_trace: Vec<f64>,
    pub converged: bool,
}

impl SubgradientResult {
    pub fn gap_db(&self) -> f64 {
        10.0 * (self.gamma_dual / self.gamma_primal).log10()
    }
}

fn projection_residual(mu: &DVector<f64>, p: &DVector<f64>, x: f64) -> f64 {
    mu.iter()
        .zip(p.iter())
        .map(|(&m, &pn)| ((2.0 * m - x * pn) / 2.0).max(0.0) * pn)
        .sum::<f64>()
        - 1.0
}

fn nu_at(mu: &DVector<f64>, p: &DVector<f64>, x: f64) -> DVector<f64> {
    DVector::from_fn(mu.len(), |n, _| ((2.0 * mu[n] - x * p[n]) / 2.0).max(0.0))
}

/// Euclidean projection onto `{nu >= 0, sum_n nu_n P_n = 1}` together with
/// the multiplier `x` of the equality constraint.
pub fn project_weighted_simplex_with_multiplier(
    mu_raw: &DVector<f64>,
    p: &DVector<f64>,
    config: &SolverConfig,
) -> Result<(DVector<f64>, f64)> {
    if mu_raw.len() != p.len() || p.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "mu has {} entries, P has {}",
            mu_raw.len(),
            p.len()
        )));
    }
    if p.iter().any(|&x| !(x > 0.0)) || mu_raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInstance(
            "projection needs P > 0 and finite mu".into(),
        ));
    }

    let spread = 2.0 * mu_raw.amax() / p.min();
    let (mut lo, mut hi) = (-spread - 1.0, spread + 1.0);
    let mut doublings = 0;
    while projection_residual(mu_raw, p, lo) <= 0.0 {
        lo -= hi - lo;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS {
            return Err(Error::BracketFailure(doublings));
        }
    }
    while projection_residual(mu_raw, p, hi) > 0.0 {
        hi += hi - lo;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS {
            return Err(Error::BracketFailure(doublings));
        }
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        x = 0.5 * (lo + hi);
        let r = projection_residual(mu_raw, p, x);
        if r.abs() <= config.bisection_tol || hi - lo <= f64::EPSILON * x.abs().max(1.0) {
            break;
        }
        if r > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
    }

    // Polish: with the active set fixed, the multiplier has a closed form.
    let active: Vec<usize> = (0..p.len())
        .filter(|&n| 2.0 * mu_raw[n] - x * p[n] > 0.0)
        .collect();
    if !active.is_empty() {
        let num: f64 = active.iter().map(|&n| mu_raw[n] * p[n]).sum::<f64>() - 1.0;
        let den: f64 = active.iter().map(|&n| p[n] * p[n]).sum();
        let exact = 2.0 * num / den;
        let same_support = (0..p.len()).all(|n| {
            let on = 2.0 * mu_raw[n] - exact * p[n] > 0.0;
            on == active.contains(&n) || (2.0 * mu_raw[n] - exact * p[n]).abs() <= 1e-14
        });
        if same_support {
            x = exact;
        }
    }
    Ok((nu_at(mu_raw, p, x), x))
}

/// Euclidean projection onto the weighted simplex, by bisection on the
/// equality multiplier.
pub fn project_weighted_simplex(
    mu_raw: &DVector<f64>,
    p: &DVector<f64>,
    config: &SolverConfig,
) -> Result<DVector<f64>> {
    project_weighted_simplex_with_multiplier(mu_raw, p, config).map(|(nu, _)| nu)
}

/// Upper bound on the optimal min-SINR certified by any normalized dual.
///
/// Returns `+inf` when the implied `beta` does not exceed one.
pub fn dual_upper_bound(inst: &ProblemInstance, dual: &DualVariables, ridge: f64) -> Result<f64> {
    let beta = compute_beta(inst, dual, ridge)?;
    let beta_f = beta.min();
    if !(beta_f > 1.0) {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (beta_f - 1.0))
}

/// Initial prices `mu_n = 1 / (N_t P_n)`.
pub fn initial_mu(inst: &ProblemInstance) -> DVector<f64> {
    let nt = inst.antennas() as f64;
    inst.power_budget().map(|p| 1.0 / (nt * p))
}

/// Runs the projected subgradient method from the default starting point.
pub fn subgradient_solve(
    inst: &ProblemInstance,
    config: &SolverConfig,
) -> Result<SubgradientResult> {
    subgradient_solve_from(inst, initial_mu(inst), config)
}

/// Everything the outer loop needs to know about one price vector.
struct Evaluation {
    dual: DualVariables,
    /// Balanced uplink SINR `f(mu)`.
    gamma: f64,
    bound: f64,
    regulated: BeamformingMatrix,
    primal: f64,
    /// Per-antenna powers of the unregulated balanced beamformer.
    direction: DVector<f64>,
}

fn evaluate(
    inst: &ProblemInstance,
    mu: &DVector<f64>,
    config: &SolverConfig,
) -> Result<Evaluation> {
    let inner = fixed_point_balance(inst, mu, config)?;
    let dual = DualVariables::new(inner.lambda, mu.clone());
    let beta = compute_beta(inst, &dual, config.ridge)?;
    let gamma = gamma_from_beta(&beta);
    let bound = dual_upper_bound(inst, &dual, config.ridge)?;
    let (regulated, unregulated, _, _) = assemble(inst, &dual, gamma, config)?;
    let primal = min_sinr(inst, &regulated)?;
    Ok(Evaluation {
        dual,
        gamma,
        bound,
        regulated,
        primal,
        direction: per_antenna_powers(&unregulated),
    })
}

struct Tracker {
    best: Option<(BeamformingMatrix, DualVariables, f64)>,
    gamma_dual: f64,
    trace: Vec<f64>,
}

impl Tracker {
    /// `gamma_dual / gamma_primal - 1` over everything seen so far.
    fn relative_gap(&self) -> f64 {
        match &self.best {
            Some((_, _, g)) if *g > 0.0 => self.gamma_dual / g - 1.0,
            _ => f64::INFINITY,
        }
    }

    fn record(&mut self, e: &Evaluation) {
        self.gamma_dual = self.gamma_dual.min(e.bound);
        if self.best.as_ref().is_none_or(|(_, _, g)| e.primal > *g) {
            self.best = Some((e.regulated.clone(), e.dual.clone(), e.primal));
        }
        self.trace.push(e.gamma);
    }
}

pub fn subgradient_solve_from(
    inst: &ProblemInstance,
    mu0: DVector<f64>,
    config: &SolverConfig,
) -> Result<SubgradientResult> {
    config.validate()?;
    let budget = inst.power_budget();
    let mut tracker = Tracker {
        best: None,
        gamma_dual: f64::INFINITY,
        trace: Vec::new(),
    };
    let mut converged = false;
    let mut iterations = 1;

    let mut current = evaluate(inst, &mu0, config)?;
    let mut mu = mu0;
    tracker.record(&current);

    match config.step_rule {
        StepRule::Geometric => {
            for j in 0..config.max_outer_iters.saturating_sub(1) {
                let step = config.step_size_base * 0.5f64.powi(j as i32);
                mu = project_weighted_simplex(&(&mu + &current.direction * step), budget, config)?;
                let next = evaluate(inst, &mu, config)?;
                tracker.record(&next);
                iterations += 1;
                let change = (next.gamma - current.gamma).abs();
                current = next;
                if change <= config.rel_tol * current.gamma.abs() {
                    converged = true;
                    break;
                }
            }
        }
        StepRule::Backtracking { initial_relative } => {
            let mut alpha =
                initial_relative * mu.norm() / current.direction.norm().max(f64::MIN_POSITIVE);
            converged = tracker.relative_gap() <= config.rel_tol;
            while !converged && iterations < config.max_outer_iters {
                if alpha * current.direction.norm() <= STALL_STEP * mu.norm() {
                    converged = tracker.relative_gap() <= STALL_GAP;
                    break;
                }
                let trial_mu =
                    project_weighted_simplex(&(&mu + &current.direction * alpha), budget, config)?;
                let trial = evaluate(inst, &trial_mu, config)?;
                tracker.record(&trial);
                iterations += 1;
                // Near the optimum f is flat to rounding; the primal value
                // still resolves the remaining error there.
                let flat = trial.gamma <= current.gamma * (1.0 + 8.0 * f64::EPSILON);
                if trial.gamma < current.gamma || (flat && trial.primal > current.primal) {
                    mu = trial_mu;
                    current = trial;
                } else {
                    alpha *= 0.5;
                }
                if tracker.relative_gap() <= config.rel_tol {
                    converged = true;
                    break;
                }
            }
        }
    }

    let (w, dual, gamma_primal) = tracker.best.expect("at least one evaluation");
    Ok(SubgradientResult {
        w,
        dual,
        gamma_primal,
        gamma_dual: tracker.gamma_dual,
        iterations,
        gamma_trace: tracker.trace,
        converged,
    })
}
