//! Downlink beamforming under per-antenna power constraints.
//!
//! The crate solves the max-min SINR (SINR balancing) problem for a
//! multiuser MISO downlink through its virtual-uplink dual: a fixed-point
//! balancer for fixed antenna prices ([`balance`]), a projected subgradient
//! method over the prices ([`subgrad`]), and recovery of a feasible
//! beamformer from dual variables ([`recover`]). Around that core sit
//! closed-form baselines, label generation for learned dual predictors,
//! inference for a small convolutional predictor, and an evaluation
//! harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balance;
pub mod baseline;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod evalsim;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod recover;
pub mod subgrad;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector};
pub use model::{BeamformingMatrix, DualVariables, ProblemInstance, SolverConfig, StepRule};
