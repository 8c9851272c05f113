//! Labeled training records: generation, zero-padding augmentation and the
//! newline-delimited JSON file format shared with the trainer.
//!
//! One record per line. Complex entries are `[re, im]` pairs, the channel
//! is a list of rows (one per user slot) and every container is padded to
//! `K' x N_t'` with exact zeros beyond the active block.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{purpose, rayleigh_channels, ChannelRng};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{ProblemInstance, SolverConfig, NORMALIZATION_TOL};
use crate::subgrad::subgradient_solve;

pub const DEFAULT_TRAIN_COUNT: usize = 20_000;
pub const DEFAULT_TEST_COUNT: usize = 5_000;

/// Records whose certified gap exceeds this are re-solved with a larger
/// iteration budget.
pub const LOOSE_GAP_DB: f64 = 1.0;
const RESOLVE_BUDGET_FACTOR: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledRecord {
    pub k_active: usize,
    pub nt_active: usize,
    pub channel: Vec<Vec<[f64; 2]>>,
    pub mu_label: Vec<f64>,
    pub lambda_label: Vec<f64>,
    pub gamma_label: f64,
    pub p_budget: Vec<f64>,
    pub n0: f64,
    pub seed: u64,
    /// Record index within the generating run; with `seed` it pins the
    /// channel stream.
    pub index: u64,
    /// Dual upper bound certifying `gamma_label`, absent if none was finite.
    pub gamma_dual: Option<f64>,
    /// Set when the gap stayed above [`LOOSE_GAP_DB`] after the re-solve.
    pub flagged: bool,
}

impl LabeledRecord {
    /// Container user count `K'`.
    pub fn k_container(&self) -> usize {
        self.channel.len()
    }

    /// Container antenna count `N_t'`.
    pub fn nt_container(&self) -> usize {
        self.mu_label.len()
    }

    /// Full padded channel as a matrix.
    pub fn channel_matrix(&self) -> CMatrix {
        CMatrix::from_fn(self.k_container(), self.nt_container(), |r, c| {
            let [re, im] = self.channel[r][c];
            Complex64::new(re, im)
        })
    }

    /// The active `k_active x nt_active` subproblem.
    pub fn active_instance(&self) -> Result<ProblemInstance> {
        let h = self
            .channel_matrix()
            .view((0, 0), (self.k_active, self.nt_active))
            .into_owned();
        let p = DVector::from_column_slice(&self.p_budget[..self.nt_active]);
        ProblemInstance::new(h, p, self.n0)
    }

    pub fn gap_db(&self) -> Option<f64> {
        self.gamma_dual
            .map(|d| 10.0 * (d / self.gamma_label).log10())
    }

    /// Checks shapes, zero tails and label normalizations.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let (kc, ntc) = (self.k_container(), self.nt_container());
        if self.k_active == 0 || self.nt_active == 0 {
            return Err("k_active and nt_active must be at least 1".into());
        }
        if self.k_active > kc || self.nt_active > ntc {
            return Err(format!(
                "active block {}x{} exceeds container {kc}x{ntc}",
                self.k_active, self.nt_active
            ));
        }
        if self.channel.iter().any(|row| row.len() != ntc) {
            return Err(format!("channel rows must all have {ntc} entries"));
        }
        if self.lambda_label.len() != kc || self.p_budget.len() != ntc {
            return Err("lambda_label / p_budget length disagrees with the channel".into());
        }
        let all_finite = self
            .channel
            .iter()
            .flatten()
            .flatten()
            .chain(&self.mu_label)
            .chain(&self.lambda_label)
            .chain(&self.p_budget)
            .all(|x| x.is_finite());
        if !all_finite || !self.gamma_label.is_finite() || !(self.n0 > 0.0) {
            return Err("non-finite value or non-positive n0".into());
        }
        for (k, row) in self.channel.iter().enumerate() {
            for (n, z) in row.iter().enumerate() {
                if (k >= self.k_active || n >= self.nt_active) && *z != [0.0, 0.0] {
                    return Err(format!(
                        "channel[{k}][{n}] lies outside the active block but is nonzero"
                    ));
                }
            }
        }
        let tails_zero = self.mu_label[self.nt_active..].iter().all(|&x| x == 0.0)
            && self.p_budget[self.nt_active..].iter().all(|&x| x == 0.0)
            && self.lambda_label[self.k_active..].iter().all(|&x| x == 0.0);
        if !tails_zero {
            return Err("label or budget tail beyond the active block is nonzero".into());
        }
        if self.p_budget[..self.nt_active].iter().any(|&p| !(p > 0.0)) {
            return Err("active power budgets must be positive".into());
        }
        let mu_sum: f64 = (0..self.nt_active)
            .map(|n| self.mu_label[n] * self.p_budget[n])
            .sum();
        let lambda_sum: f64 = self.lambda_label[..self.k_active].iter().sum::<f64>() * self.n0;
        if (mu_sum - 1.0).abs() > NORMALIZATION_TOL || (lambda_sum - 1.0).abs() > NORMALIZATION_TOL
        {
            return Err(format!(
                "labels not normalized: sum mu P = {mu_sum}, sum lambda N0 = {lambda_sum}"
            ));
        }
        Ok(())
    }
}

/// Parameters of a label-generation run.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpec {
    pub users: usize,
    pub antennas: usize,
    /// Per-antenna budget, the same on every antenna.
    pub power: f64,
    pub noise_power: f64,
    pub base_seed: u64,
}

/// Solves `inst` and packs the result as an unpadded record.
pub fn label_instance(
    inst: &ProblemInstance,
    seed: u64,
    index: u64,
    config: &SolverConfig,
) -> Result<LabeledRecord> {
    let mut r = subgradient_solve(inst, config)?;
    let mut flagged = false;
    if !(r.gap_db() <= LOOSE_GAP_DB) {
        let bigger = SolverConfig {
            max_outer_iters: config.max_outer_iters * RESOLVE_BUDGET_FACTOR,
            max_inner_iters: config.max_inner_iters * RESOLVE_BUDGET_FACTOR,
            ..config.clone()
        };
        let again = subgradient_solve(inst, &bigger)?;
        if again.gap_db() < r.gap_db() {
            r = again;
        }
        flagged = !(r.gap_db() <= LOOSE_GAP_DB);
    }
    let h = inst.channels();
    Ok(LabeledRecord {
        k_active: inst.users(),
        nt_active: inst.antennas(),
        channel: (0..h.nrows())
            .map(|k| {
                (0..h.ncols())
                    .map(|n| [h[(k, n)].re, h[(k, n)].im])
                    .collect()
            })
            .collect(),
        mu_label: r.dual.mu.iter().copied().collect(),
        lambda_label: r.dual.lambda.iter().copied().collect(),
        gamma_label: r.gamma_primal,
        p_budget: inst.power_budget().iter().copied().collect(),
        n0: inst.noise_power(),
        seed,
        index,
        gamma_dual: r.gamma_dual.is_finite().then_some(r.gamma_dual),
        flagged,
    })
}

fn label_one(
    spec: &LabelSpec,
    k: usize,
    nt: usize,
    index: u64,
    config: &SolverConfig,
) -> Result<LabeledRecord> {
    let mut rng = ChannelRng::for_record(spec.base_seed, index, purpose::CHANNEL);
    let h = rayleigh_channels(k, nt, &mut rng);
    let inst = ProblemInstance::with_uniform_power(h, spec.power, spec.noise_power)?;
    label_instance(&inst, spec.base_seed, index, config)
}

/// Labels records `first..first + count`, in index order. A failing record
/// yields an `Err` in its slot; the rest of the run is unaffected.
pub fn generate_labels(
    spec: &LabelSpec,
    first: u64,
    count: usize,
    config: &SolverConfig,
) -> Vec<Result<LabeledRecord>> {
    (first..first + count as u64)
        .into_par_iter()
        .map(|i| label_one(spec, spec.users, spec.antennas, i, config))
        .collect()
}

/// Embeds the active block of `record` into a `k_prime x nt_prime`
/// container.
pub fn augment_pad(
    record: &LabeledRecord,
    k_prime: usize,
    nt_prime: usize,
) -> Result<LabeledRecord> {
    if record.k_active > k_prime {
        return Err(Error::DimensionExceeded {
            got: record.k_active,
            max: k_prime,
        });
    }
    if record.nt_active > nt_prime {
        return Err(Error::DimensionExceeded {
            got: record.nt_active,
            max: nt_prime,
        });
    }
    let (ka, na) = (record.k_active, record.nt_active);
    let pad = |v: &[f64], active: usize, len: usize| {
        let mut out = vec![0.0; len];
        out[..active].copy_from_slice(&v[..active]);
        out
    };
    let channel = (0..k_prime)
        .map(|k| {
            (0..nt_prime)
                .map(|n| {
                    if k < ka && n < na {
                        record.channel[k][n]
                    } else {
                        [0.0, 0.0]
                    }
                })
                .collect()
        })
        .collect();
    Ok(LabeledRecord {
        channel,
        mu_label: pad(&record.mu_label, na, nt_prime),
        lambda_label: pad(&record.lambda_label, ka, k_prime),
        p_budget: pad(&record.p_budget, na, nt_prime),
        ..record.clone()
    })
}

/// Draws `(K, N_t)` uniformly from `{1..k_max} x {1..nt_max}`.
pub fn sample_active_dims<R: Rng + ?Sized>(
    k_max: usize,
    nt_max: usize,
    rng: &mut R,
) -> (usize, usize) {
    (rng.random_range(1..=k_max), rng.random_range(1..=nt_max))
}

/// Mixed-size records in a `k_max x nt_max` container. The active size of
/// record `i` is drawn from its own augmentation stream.
pub fn generate_augmented(
    spec: &LabelSpec,
    k_max: usize,
    nt_max: usize,
    first: u64,
    count: usize,
    config: &SolverConfig,
) -> Vec<Result<LabeledRecord>> {
    (first..first + count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChannelRng::for_record(spec.base_seed, i, purpose::AUGMENT);
            let (k, nt) = sample_active_dims(k_max, nt_max, &mut rng);
            let rec = label_one(spec, k, nt, i, config)?;
            augment_pad(&rec, k_max, nt_max)
        })
        .collect()
}

/// Writes one JSON object per line.
pub fn write_records<W: Write>(mut out: W, records: &[LabeledRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[LabeledRecord]) -> Result<()> {
    write_records(BufWriter::new(File::create(path)?), records)
}

/// Parses a whole dataset, validating every record. Blank lines are
/// skipped; errors carry the byte offset of the offending record.
pub fn parse_records(bytes: &[u8]) -> Result<Vec<LabeledRecord>> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        let start = offset;
        offset += line.len();
        let body = line.strip_suffix(b"\n").unwrap_or(line);
        if body.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec: LabeledRecord = serde_json::from_slice(body).map_err(|e| Error::Record {
            offset: (start + e.column().saturating_sub(1)) as u64,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|message| Error::Record {
            offset: start as u64,
            message,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledRecord>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_records(&bytes)
}

/// `<dir>/<name>.train.ndj` and `<dir>/<name>.test.ndj`.
pub fn split_paths(dir: impl AsRef<Path>, name: &str) -> (PathBuf, PathBuf) {
    let dir = dir.as_ref();
    (
        dir.join(format!("{name}.train.ndj")),
        dir.join(format!("{name}.test.ndj")),
    )
}
