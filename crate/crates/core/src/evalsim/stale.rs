//! Stale-CSI simulator.
//!
//! The channel follows an AR(1) trajectory sampled every
//! `evolution.step_seconds`. CSI snapshots arrive every `feedback_period`.
//! Each arm owns one solver: it starts on the newest snapshot, its
//! beamformer goes live `latency` seconds later, and it starts again at the
//! first feedback instant after it became free. Packets are sent every
//! `packet_interval` seconds through the channel of their own send time,
//! using whatever beamformer is live at that moment.
//!
//! All arms see the same channel trajectory and the same per-packet bits
//! and noise, so differences in BER come from the beamformers alone.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ber::{count_bit_errors, BitErrors};
use crate::baseline::{rzf, zf};
use crate::channel::{evolve, purpose, rayleigh_channels, ChannelRng, EvolutionParams};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{from_db, BeamformingMatrix, ProblemInstance, SolverConfig};
use crate::nn::{predict_and_recover, NetworkWeights};
use crate::recover::recover_from_mu;
use crate::subgrad::{subgradient_solve, SubgradientResult};

/// Default CSI feedback period in seconds.
pub const FEEDBACK_PERIOD: f64 = 2e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmKind {
    /// Learned mu predictor. Without weights it is emulated by the optimal
    /// mu under multiplicative log-normal prediction error.
    Learned,
    /// Subgradient solver.
    Optimal,
    Zf,
    Rzf,
}

impl ArmKind {
    pub fn name(self) -> &'static str {
        match self {
            ArmKind::Learned => "learned",
            ArmKind::Optimal => "optimal",
            ArmKind::Zf => "zf",
            ArmKind::Rzf => "rzf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodLatency {
    pub method: ArmKind,
    pub seconds: f64,
}

impl MethodLatency {
    /// Typical computation times: learned 5 ms, optimal 80 ms, ZF and RZF
    /// 0.2 ms.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self {
                method: ArmKind::Learned,
                seconds: 5e-3,
            },
            Self {
                method: ArmKind::Optimal,
                seconds: 8e-2,
            },
            Self {
                method: ArmKind::Zf,
                seconds: 2e-4,
            },
            Self {
                method: ArmKind::Rzf,
                seconds: 2e-4,
            },
        ]
    }
}

/// One simulated arm. Same as [`MethodLatency`], kept as a separate name
/// for call sites that build arms programmatically.
pub type Arm = MethodLatency;

fn default_feedback() -> f64 {
    FEEDBACK_PERIOD
}
fn default_packet_interval() -> f64 {
    1e-3
}
fn default_users() -> usize {
    4
}
fn default_noise() -> f64 {
    1.0
}
fn default_surrogate_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StalenessScenario {
    pub evolution: EvolutionParams,
    pub latencies: Vec<MethodLatency>,
    pub packets: usize,
    pub symbols_per_packet: usize,
    pub tx_power_gains_db: Vec<f64>,
    #[serde(default = "default_feedback")]
    pub feedback_period: f64,
    #[serde(default = "default_packet_interval")]
    pub packet_interval: f64,
    #[serde(default = "default_users")]
    pub users: usize,
    #[serde(default = "default_users")]
    pub antennas: usize,
    #[serde(default = "default_noise")]
    pub noise_power: f64,
    /// Per-antenna power at 0 dB transmit gain, in dB relative to `noise_power`.
    #[serde(default)]
    pub reference_power_db: f64,
    /// Log-standard deviation of the learned-arm emulation error.
    #[serde(default = "default_surrogate_noise")]
    pub surrogate_noise: f64,
}

impl Default for StalenessScenario {
    /// Dynamic channel whose correlation falls to 0.5 after 160 ms, so the
    /// 80 ms solver spans half a coherence time.
    fn default() -> Self {
        Self {
            evolution: EvolutionParams::from_span(0.5, 0.16, 1e-3).expect("valid constants"),
            latencies: MethodLatency::defaults(),
            packets: 10_000,
            symbols_per_packet: 256,
            tx_power_gains_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            feedback_period: FEEDBACK_PERIOD,
            packet_interval: 1e-3,
            users: 4,
            antennas: 4,
            noise_power: 1.0,
            reference_power_db: 0.0,
            surrogate_noise: 0.1,
        }
    }
}

impl StalenessScenario {
    pub fn validate(&self) -> Result<()> {
        EvolutionParams::new(self.evolution.correlation, self.evolution.step_seconds)?;
        let positive = [self.feedback_period, self.packet_interval, self.noise_power];
        if self.packets == 0
            || self.symbols_per_packet == 0
            || self.users == 0
            || self.antennas == 0
            || positive.iter().any(|&x| !(x > 0.0 && x.is_finite()))
            || !(self.surrogate_noise >= 0.0)
            || self
                .latencies
                .iter()
                .any(|l| !(l.seconds >= 0.0 && l.seconds.is_finite()))
        {
            return Err(Error::InvalidInstance(
                "staleness scenario has a non-positive count or time".into(),
            ));
        }
        Ok(())
    }

    fn warmup(&self) -> f64 {
        let slowest = self.latencies.iter().map(|l| l.seconds).fold(0.0, f64::max);
        slowest + self.feedback_period
    }

    fn packet_time(&self, p: usize) -> f64 {
        self.warmup() + p as f64 * self.packet_interval
    }

    fn end_time(&self) -> f64 {
        self.packet_time(self.packets - 1)
    }

    fn step_of(&self, t: f64) -> usize {
        (t / self.evolution.step_seconds + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaleRow {
    pub method: String,
    pub latency: f64,
    pub power_gain_db: f64,
    pub user: usize,
    pub ber: f64,
}

/// `(start, ready)` times of every solve of an arm, in order.
fn schedule(latency: f64, period: f64, end: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut slot = 0usize;
    loop {
        let start = slot as f64 * period;
        let ready = start + latency;
        if ready > end {
            break;
        }
        out.push((start, ready));
        let free_slot = (ready / period - 1e-9).ceil().max(0.0) as usize;
        slot = free_slot.max(slot + 1);
    }
    out
}

struct Snapshots<'a> {
    trajectory: &'a [CMatrix],
    scenario: &'a StalenessScenario,
}

impl Snapshots<'_> {
    fn at(&self, t: f64) -> &CMatrix {
        let s = self.scenario.step_of(t).min(self.trajectory.len() - 1);
        &self.trajectory[s]
    }

    fn instance(&self, t: f64, power: f64) -> Result<ProblemInstance> {
        ProblemInstance::with_uniform_power(self.at(t).clone(), power, self.scenario.noise_power)
    }
}

fn surrogate_mu(
    opt: &SubgradientResult,
    inst: &ProblemInstance,
    sigma: f64,
    rng: &mut ChannelRng,
) -> DVector<f64> {
    let noisy = opt.dual.mu.map(|m| {
        let z: f64 = StandardNormal.sample(rng);
        m * (sigma * z).exp()
    });
    let s = noisy.dot(inst.power_budget());
    noisy / s
}

/// Runs every arm of `scenario` at every transmit gain.
pub fn staleness_sim(
    scenario: &StalenessScenario,
    seed: u64,
    config: &SolverConfig,
    network: Option<Arc<NetworkWeights>>,
) -> Result<Vec<StaleRow>> {
    scenario.validate()?;
    let (k, nt) = (scenario.users, scenario.antennas);

    let steps = scenario.step_of(scenario.end_time()) + 1;
    let mut trajectory = Vec::with_capacity(steps);
    trajectory.push(rayleigh_channels(
        k,
        nt,
        &mut ChannelRng::for_record(seed, 0, purpose::CHANNEL),
    ));
    let mut evo_rng = ChannelRng::for_record(seed, 0, purpose::EVOLUTION);
    for s in 1..steps {
        let next = evolve(&trajectory[s - 1], &scenario.evolution, &mut evo_rng);
        trajectory.push(next);
    }
    let snaps = Snapshots {
        trajectory: &trajectory,
        scenario,
    };

    let mut rows = Vec::new();
    for &gain_db in &scenario.tx_power_gains_db {
        let power = from_db(scenario.reference_power_db + gain_db) * scenario.noise_power;
        let mut optimal_cache: HashMap<u64, SubgradientResult> = HashMap::new();

        for arm in &scenario.latencies {
            let plan = schedule(arm.seconds, scenario.feedback_period, scenario.end_time());
            let needs_optimum = arm.method == ArmKind::Optimal
                || (arm.method == ArmKind::Learned && network.is_none());
            if needs_optimum {
                let missing: Vec<(u64, f64)> = plan
                    .iter()
                    .map(|&(start, _)| ((start / scenario.feedback_period).round() as u64, start))
                    .filter(|(slot, _)| !optimal_cache.contains_key(slot))
                    .collect();
                let solved: Vec<(u64, SubgradientResult)> = missing
                    .par_iter()
                    .map(|&(slot, start)| {
                        Ok((
                            slot,
                            subgradient_solve(&snaps.instance(start, power)?, config)?,
                        ))
                    })
                    .collect::<Result<_>>()?;
                optimal_cache.extend(solved);
            }

            let beamformers: Vec<(f64, BeamformingMatrix)> = plan
                .par_iter()
                .map(|&(start, ready)| {
                    let inst = snaps.instance(start, power)?;
                    let slot = (start / scenario.feedback_period).round() as u64;
                    let w = match arm.method {
                        ArmKind::Optimal => optimal_cache[&slot].w.clone(),
                        ArmKind::Zf => zf(&inst)?,
                        ArmKind::Rzf => rzf(&inst)?,
                        ArmKind::Learned => match &network {
                            Some(net) => predict_and_recover(&inst, net, config)?.0,
                            None => {
                                let mut rng =
                                    ChannelRng::for_record(seed, slot, purpose::SURROGATE);
                                let mu = surrogate_mu(
                                    &optimal_cache[&slot],
                                    &inst,
                                    scenario.surrogate_noise,
                                    &mut rng,
                                );
                                recover_from_mu(&inst, &mu, config)?.w
                            }
                        },
                    };
                    Ok((ready, w))
                })
                .collect::<Result<_>>()?;

            let totals = (0..scenario.packets)
                .into_par_iter()
                .map(|p| {
                    let t = scenario.packet_time(p);
                    let live = beamformers.partition_point(|(ready, _)| *ready <= t + 1e-12);
                    let w = &beamformers[live - 1].1;
                    let mut rng = ChannelRng::for_record(seed, p as u64, purpose::SYMBOLS);
                    count_bit_errors(
                        snaps.at(t),
                        w.entries(),
                        scenario.noise_power,
                        scenario.symbols_per_packet,
                        &mut rng,
                    )
                })
                .reduce(
                    || BitErrors::empty(k),
                    |mut a, b| {
                        a.merge(&b);
                        a
                    },
                );
            for (user, ber) in totals.rates().iter().enumerate() {
                rows.push(StaleRow {
                    method: arm.method.name().into(),
                    latency: arm.seconds,
                    power_gain_db: gain_db,
                    user,
                    ber: *ber,
                });
            }
        }
    }
    Ok(rows)
}

/// Average BER over users of one arm at one gain.
pub fn mean_ber(rows: &[StaleRow], method: &str, latency: f64, gain_db: f64) -> Option<f64> {
    let sel: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.latency == latency && r.power_gain_db == gain_db)
        .map(|r| r.ber)
        .collect();
    (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(correlation: f64) -> StalenessScenario {
        StalenessScenario {
            evolution: EvolutionParams::new(correlation, 1e-3).unwrap(),
            packets: 200,
            symbols_per_packet: 64,
            tx_power_gains_db: vec![10.0],
            ..StalenessScenario::default()
        }
    }

    #[test]
    fn schedule_respects_busy_solver() {
        let s = schedule(0.08, 0.02, 0.5);
        assert_eq!(s[0], (0.0, 0.08));
        assert!((s[1].0 - 0.08).abs() < 1e-12);
        let s = schedule(0.005, 0.02, 0.1);
        assert!(s.windows(2).all(|w| (w[1].0 - w[0].0 - 0.02).abs() < 1e-12));
        let s = schedule(0.0, 0.02, 0.1);
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn static_zero_latency_equals_fresh_evaluation() {
        let mut sc = small(1.0);
        sc.latencies = vec![MethodLatency {
            method: ArmKind::Rzf,
            seconds: 0.0,
        }];
        let rows = staleness_sim(&sc, 4, &SolverConfig::default(), None).unwrap();

        let h = rayleigh_channels(4, 4, &mut ChannelRng::for_record(4, 0, purpose::CHANNEL));
        let inst = ProblemInstance::with_uniform_power(h, from_db(10.0), 1.0).unwrap();
        let w = rzf(&inst).unwrap();
        let mut total = BitErrors::empty(4);
        for p in 0..sc.packets {
            let mut rng = ChannelRng::for_record(4, p as u64, purpose::SYMBOLS);
            total.merge(&count_bit_errors(
                inst.channels(),
                w.entries(),
                1.0,
                sc.symbols_per_packet,
                &mut rng,
            ));
        }
        for (row, expected) in rows.iter().zip(total.rates().iter()) {
            assert_eq!(row.ber, *expected);
        }
    }

    #[test]
    fn equal_latencies_give_equal_ber() {
        let mut sc = small(0.99);
        sc.latencies = vec![
            MethodLatency {
                method: ArmKind::Zf,
                seconds: 0.01,
            },
            MethodLatency {
                method: ArmKind::Zf,
                seconds: 0.01,
            },
        ];
        let rows = staleness_sim(&sc, 1, &SolverConfig::default(), None).unwrap();
        for u in 0..4 {
            assert_eq!(rows[u].ber, rows[4 + u].ber);
        }
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let sc = StalenessScenario::default();
        let text = serde_json::to_string(&sc).unwrap();
        let back: StalenessScenario = serde_json::from_str(&text).unwrap();
        assert_eq!(sc, back);
        let minimal = r#"{"evolution":{"correlation":1.0,"step_seconds":0.001},
            "latencies":[{"method":"zf","seconds":0.0}],"packets":1,"symbols_per_packet":1,"tx_power_gains_db":[0]}"#;
        let parsed: StalenessScenario = serde_json::from_str(minimal).unwrap();
        assert_eq!(parsed.feedback_period, FEEDBACK_PERIOD);
        parsed.validate().unwrap();
    }

    #[test]
    fn default_scenario_spans_half_a_coherence_time() {
        let sc = StalenessScenario::default();
        assert!(sc.evolution.correlation_after(0.08) <= 0.5f64.sqrt() + 1e-12);
    }
}
