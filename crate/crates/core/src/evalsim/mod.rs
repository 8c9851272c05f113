//! Evaluation harness: method dispatch, certification, min-SINR sweeps,
//! QPSK bit-error Monte Carlo and the stale-CSI simulator.

mod ber;
mod stale;

use std::sync::Arc;

use rayon::prelude::*;

use crate::baseline::{rzf, zf};
use crate::channel::{perturb_csi, purpose, ChannelRng};
use crate::error::{Error, Result};
use crate::model::{db, min_sinr, BeamformingMatrix, DualVariables, ProblemInstance, SolverConfig};
use crate::nn::{predict_and_recover, NetworkWeights};
use crate::subgrad::{dual_upper_bound, subgradient_solve};

pub use ber::{ber_qpsk, count_bit_errors, q_function, BitErrors};
pub use stale::{
    mean_ber, staleness_sim, Arm, ArmKind, MethodLatency, StaleRow, StalenessScenario,
    FEEDBACK_PERIOD,
};

/// A way of producing a feasible beamformer from channel knowledge.
#[derive(Debug, Clone)]
pub enum Method {
    Subgradient,
    Zf,
    Rzf,
    Network(Arc<NetworkWeights>),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Subgradient => "subgradient",
            Method::Zf => "zf",
            Method::Rzf => "rzf",
            Method::Network(w) => match w.meta.head {
                crate::nn::Head::Mu => "nn-mu",
                crate::nn::Head::LambdaMu => "nn-lambda-mu",
            },
        }
    }

    /// Regulated beamformer for `inst`.
    pub fn solve(
        &self,
        inst: &ProblemInstance,
        config: &SolverConfig,
    ) -> Result<BeamformingMatrix> {
        match self {
            Method::Subgradient => Ok(subgradient_solve(inst, config)?.w),
            Method::Zf => zf(inst),
            Method::Rzf => rzf(inst),
            Method::Network(w) => Ok(predict_and_recover(inst, w, config)?.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub gamma_primal: f64,
    pub gamma_dual: f64,
    pub gap_db: f64,
}

/// Min-SINR of `w` against the bound certified by `dual`.
pub fn certify(
    inst: &ProblemInstance,
    w: &BeamformingMatrix,
    dual: &DualVariables,
    ridge: f64,
) -> Result<Certificate> {
    dual.check_shape(inst)?;
    if !dual.is_normalized(inst) {
        return Err(Error::InvalidInstance(
            "certify needs a normalized dual".into(),
        ));
    }
    let gamma_primal = min_sinr(inst, w)?;
    let gamma_dual = dual_upper_bound(inst, dual, ridge)?;
    Ok(Certificate {
        gamma_primal,
        gamma_dual,
        gap_db: 10.0 * (gamma_dual / gamma_primal).log10(),
    })
}

/// Mean min-SINR of one method over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub mean_min_sinr: f64,
}

impl MethodSummary {
    pub fn mean_db(&self) -> f64 {
        db(self.mean_min_sinr)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-instance min-SINR of every method, errors tagged with the instance
/// index. Rows follow `methods`, columns follow `instances`.
pub fn min_sinr_table(
    instances: &[ProblemInstance],
    methods: &[Method],
    config: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    methods
        .iter()
        .map(|m| {
            instances
                .par_iter()
                .enumerate()
                .map(|(i, inst)| {
                    m.solve(inst, config)
                        .and_then(|w| min_sinr(inst, &w))
                        .map_err(|e| Error::at_record(i, e))
                })
                .collect()
        })
        .collect()
}

pub fn benchmark(
    instances: &[ProblemInstance],
    methods: &[Method],
    config: &SolverConfig,
) -> Result<Vec<MethodSummary>> {
    let table = min_sinr_table(instances, methods, config)?;
    Ok(methods
        .iter()
        .zip(table)
        .map(|(m, row)| MethodSummary {
            method: m.name().into(),
            mean_min_sinr: mean(&row),
        })
        .collect())
}

/// Mean of the dual bound reported by the subgradient solver.
pub fn mean_dual_bound(instances: &[ProblemInstance], config: &SolverConfig) -> Result<f64> {
    let bounds: Vec<f64> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            subgradient_solve(inst, config)
                .map(|r| r.gamma_dual)
                .map_err(|e| Error::at_record(i, e))
        })
        .collect::<Result<_>>()?;
    Ok(mean(&bounds))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub sigma: f64,
    pub mean_min_sinr: f64,
}

/// Imperfect-CSI sweep: each method designs on `h + sigma e` and is scored
/// on the true `h`. Instance `i` uses the same error draw `e` for every
/// `sigma`, so `sigma = 0` reproduces the clean benchmark exactly.
pub fn robustness_sweep(
    instances: &[ProblemInstance],
    sigmas: &[f64],
    methods: &[Method],
    seed: u64,
    config: &SolverConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &sigma in sigmas {
        let estimates: Vec<ProblemInstance> = instances
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                let mut rng = ChannelRng::for_record(seed, i as u64, purpose::CSI_ERROR);
                let h = perturb_csi(inst.channels(), sigma, &mut rng)?;
                ProblemInstance::new(h, inst.power_budget().clone(), inst.noise_power())
            })
            .collect::<Result<_>>()?;
        for m in methods {
            let scores: Vec<f64> = instances
                .par_iter()
                .zip(&estimates)
                .enumerate()
                .map(|(i, (truth, est))| {
                    m.solve(est, config)
                        .and_then(|w| min_sinr(truth, &w))
                        .map_err(|e| Error::at_record(i, e))
                })
                .collect::<Result<_>>()?;
            rows.push(SweepRow {
                method: m.name().into(),
                sigma,
                mean_min_sinr: mean(&scores),
            });
        }
    }
    Ok(rows)
}
