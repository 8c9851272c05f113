//! Inference for the two-layer convolutional dual predictor.
//!
//! Architecture: `conv3x3(1->8) -> BN -> ReLU -> conv3x3(8->8) -> BN -> ReLU
//! -> flatten -> dense -> sigmoid`. The input image has 2 rows (real and
//! imaginary parts) and `nt_max * k_max` columns; column `k * nt_max + n`
//! holds `h_k[n]`. Convolutions use stride 1 and zero padding 1, so the
//! spatial shape never changes.
//!
//! # Weight file
//!
//! A single JSON object:
//!
//! ```text
//! { "format_version": 1,
//!   "meta":  { "nt_max": 4, "k_max": 4, "head": "mu", "label_scale": [..] },
//!   "conv1": { "weight": T[8,1,3,3], "bias": T[8] },
//!   "bn1":   { "scale": T[8], "shift": T[8], "running_mean": T[8], "running_var": T[8] },
//!   "conv2": { "weight": T[8,8,3,3], "bias": T[8] },
//!   "bn2":   { ... },
//!   "fc":    { "weight": T[flatten_dim, out_dim], "bias": T[out_dim] } }
//! ```
//!
//! where `T[shape]` is `{"shape": [...], "data": [...]}` with `data` in
//! row-major order. Convolution weights are `[out, in, ky, kx]`. The
//! flattened feature vector is channel-major: index `c * (2 L) + r * L + j`
//! for channel `c`, row `r` and column `j` of an `L`-column map.
//! `label_scale`, if present, multiplies the sigmoid outputs element-wise
//! before normalization. The `"lambda_mu"` head emits `k_max` lambda
//! entries followed by `nt_max` mu entries.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{BeamformingMatrix, DualVariables, ProblemInstance, SolverConfig};
use crate::recover::{recover_from_lambda_mu, recover_from_mu};

pub const FORMAT_VERSION: u32 = 1;
pub const CHANNELS: usize = 8;
pub const KERNEL: usize = 3;
pub const BN_EPS: f64 = 1e-5;
/// Sums below this cannot be normalized.
pub const MIN_NORMALIZER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Mu,
    LambdaMu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub nt_max: usize,
    pub k_max: usize,
    pub head: Head,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_scale: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    fn check(&self, field: &str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::schema(
                field,
                format!("expected shape {shape:?}, found {:?}", self.shape),
            ));
        }
        if self.data.len() != shape.iter().product::<usize>() {
            return Err(Error::schema(
                field,
                format!(
                    "shape {shape:?} needs {} values, found {}",
                    shape.iter().product::<usize>(),
                    self.data.len()
                ),
            ));
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::schema(field, "non-finite parameter"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNorm {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    /// Scale one, shift zero, mean zero, variance `1 - eps`: an exact identity.
    pub fn identity() -> Self {
        Self {
            scale: Tensor::new(vec![CHANNELS], vec![1.0; CHANNELS]),
            shift: Tensor::zeros(vec![CHANNELS]),
            running_mean: Tensor::zeros(vec![CHANNELS]),
            running_var: Tensor::new(vec![CHANNELS], vec![1.0 - BN_EPS; CHANNELS]),
        }
    }

    fn check(&self, field: &str) -> Result<()> {
        self.scale.check(field, &[CHANNELS])?;
        self.shift.check(field, &[CHANNELS])?;
        self.running_mean.check(field, &[CHANNELS])?;
        self.running_var.check(field, &[CHANNELS])?;
        if self.running_var.data.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::schema(field, "running variance must be positive"));
        }
        Ok(())
    }

    fn apply(&self, c: usize, x: f64) -> f64 {
        (x - self.running_mean.data[c]) / (self.running_var.data[c] + BN_EPS).sqrt()
            * self.scale.data[c]
            + self.shift.data[c]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkWeights {
    pub format_version: u32,
    pub meta: Meta,
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    pub fc: Dense,
}

impl NetworkWeights {
    /// All parameters zero, batch norms exact identities.
    pub fn zeros(nt_max: usize, k_max: usize, head: Head) -> Self {
        let meta = Meta {
            nt_max,
            k_max,
            head,
            label_scale: None,
        };
        let out = meta.out_dim();
        Self {
            format_version: FORMAT_VERSION,
            conv1: Conv {
                weight: Tensor::zeros(vec![CHANNELS, 1, KERNEL, KERNEL]),
                bias: Tensor::zeros(vec![CHANNELS]),
            },
            bn1: BatchNorm::identity(),
            conv2: Conv {
                weight: Tensor::zeros(vec![CHANNELS, CHANNELS, KERNEL, KERNEL]),
                bias: Tensor::zeros(vec![CHANNELS]),
            },
            bn2: BatchNorm::identity(),
            fc: Dense {
                weight: Tensor::zeros(vec![meta.flatten_dim(), out]),
                bias: Tensor::zeros(vec![out]),
            },
            meta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::schema(
                "format_version",
                format!("unsupported version {}", self.format_version),
            ));
        }
        if self.meta.nt_max == 0 || self.meta.k_max == 0 {
            return Err(Error::schema("meta", "nt_max and k_max must be positive"));
        }
        if let Some(s) = &self.meta.label_scale {
            if s.len() != self.meta.out_dim() || s.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::schema(
                    "meta",
                    format!(
                        "label_scale must hold {} positive values",
                        self.meta.out_dim()
                    ),
                ));
            }
        }
        self.conv1
            .weight
            .check("conv1", &[CHANNELS, 1, KERNEL, KERNEL])?;
        self.conv1.bias.check("conv1", &[CHANNELS])?;
        self.bn1.check("bn1")?;
        self.conv2
            .weight
            .check("conv2", &[CHANNELS, CHANNELS, KERNEL, KERNEL])?;
        self.conv2.bias.check("conv2", &[CHANNELS])?;
        self.bn2.check("bn2")?;
        self.fc
            .weight
            .check("fc", &[self.meta.flatten_dim(), self.meta.out_dim()])?;
        self.fc.bias.check("fc", &[self.meta.out_dim()])?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, self).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }
}

impl Meta {
    /// Columns of the input image.
    pub fn width(&self) -> usize {
        self.nt_max * self.k_max
    }

    pub fn flatten_dim(&self) -> usize {
        2 * self.width() * CHANNELS
    }

    pub fn out_dim(&self) -> usize {
        match self.head {
            Head::Mu => self.nt_max,
            Head::LambdaMu => self.k_max + self.nt_max,
        }
    }
}

fn parameter_count(c: &Conv) -> usize {
    c.weight.data.len() + c.bias.data.len()
}

/// `(conv1, conv2)` parameter counts; 80 and 584 for a valid file.
pub fn conv_parameter_counts(w: &NetworkWeights) -> (usize, usize) {
    (parameter_count(&w.conv1), parameter_count(&w.conv2))
}

/// Reads and validates a weight file.
pub fn load_weights(path: impl AsRef<Path>) -> Result<NetworkWeights> {
    let reader = BufReader::new(File::open(path)?);
    let w: NetworkWeights = serde_json::from_reader(reader).map_err(|e| {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::schema("file", e.to_string())
        }
    })?;
    w.validate()?;
    Ok(w)
}

/// `2 x (nt_max k_max)` input image for a channel no larger than the
/// container; missing users and antennas read as zero.
pub fn input_image(meta: &Meta, channel: &CMatrix) -> Result<DMatrix<f64>> {
    let (k, nt) = channel.shape();
    if k > meta.k_max {
        return Err(Error::DimensionExceeded {
            got: k,
            max: meta.k_max,
        });
    }
    if nt > meta.nt_max {
        return Err(Error::DimensionExceeded {
            got: nt,
            max: meta.nt_max,
        });
    }
    let mut img = DMatrix::zeros(2, meta.width());
    for u in 0..k {
        for n in 0..nt {
            let z = channel[(u, n)];
            img[(0, u * meta.nt_max + n)] = z.re;
            img[(1, u * meta.nt_max + n)] = z.im;
        }
    }
    Ok(img)
}

/// 3x3 convolution as one matrix product over unrolled patches.
/// `input` is `in_ch x (2 L)`, rows of each map stored consecutively.
fn conv_layer(input: &DMatrix<f64>, conv: &Conv, width: usize) -> DMatrix<f64> {
    let in_ch = input.nrows();
    let pixels = 2 * width;
    let mut patches = DMatrix::zeros(in_ch * KERNEL * KERNEL, pixels);
    for c in 0..in_ch {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                for r in 0..2 {
                    for j in 0..width {
                        let (y, x) = (r as isize + ky as isize - 1, j as isize + kx as isize - 1);
                        if (0..2).contains(&y) && (0..width as isize).contains(&x) {
                            patches[(row, r * width + j)] =
                                input[(c, y as usize * width + x as usize)];
                        }
                    }
                }
            }
        }
    }
    let kernels = DMatrix::from_row_slice(CHANNELS, in_ch * KERNEL * KERNEL, &conv.weight.data);
    let mut out = kernels * patches;
    for (c, mut row) in out.row_iter_mut().enumerate() {
        row.add_scalar_mut(conv.bias.data[c]);
    }
    out
}

fn bn_relu(mut maps: DMatrix<f64>, bn: &BatchNorm) -> DMatrix<f64> {
    for c in 0..maps.nrows() {
        for v in maps.row_mut(c).iter_mut() {
            *v = bn.apply(c, *v).max(0.0);
        }
    }
    maps
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Raw sigmoid outputs (before `label_scale`).
pub fn forward(weights: &NetworkWeights, channel: &CMatrix) -> Result<DVector<f64>> {
    let meta = &weights.meta;
    let width = meta.width();
    let img = input_image(meta, channel)?;
    let mut x = DMatrix::zeros(1, 2 * width);
    for r in 0..2 {
        for j in 0..width {
            x[(0, r * width + j)] = img[(r, j)];
        }
    }
    let x = bn_relu(conv_layer(&x, &weights.conv1, width), &weights.bn1);
    let x = bn_relu(conv_layer(&x, &weights.conv2, width), &weights.bn2);
    // channel-major flatten: row c of `x` is already contiguous in that order
    let flat = DVector::from_iterator(meta.flatten_dim(), x.transpose().iter().copied());
    let fc = DMatrix::from_row_slice(meta.flatten_dim(), meta.out_dim(), &weights.fc.weight.data);
    let out = fc.tr_mul(&flat) + DVector::from_column_slice(&weights.fc.bias.data);
    Ok(out.map(sigmoid))
}

fn normalize(raw: &DVector<f64>, weights: &DVector<f64>) -> Result<DVector<f64>> {
    if raw.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} outputs for {} weights",
            raw.len(),
            weights.len()
        )));
    }
    let s = raw.dot(weights);
    if !(s >= MIN_NORMALIZER) {
        return Err(Error::AllZero);
    }
    Ok(raw / s)
}

/// `mu_n = raw_n / sum_m raw_m P_m`.
pub fn normalize_mu(raw: &DVector<f64>, budget: &DVector<f64>) -> Result<DVector<f64>> {
    normalize(raw, budget)
}

/// `lambda_k = raw_k / (N0 sum_m raw_m)`.
pub fn normalize_lambda(raw: &DVector<f64>, noise_power: f64) -> Result<DVector<f64>> {
    normalize(raw, &DVector::from_element(raw.len(), noise_power))
}

/// Network prediction mapped onto normalized duals for the active block.
/// The lambda part is `None` for the `"mu"` head.
pub fn predict_duals(
    inst: &ProblemInstance,
    weights: &NetworkWeights,
) -> Result<(Option<DVector<f64>>, DVector<f64>)> {
    let meta = &weights.meta;
    let mut raw = forward(weights, inst.channels())?;
    if let Some(scale) = &meta.label_scale {
        raw.component_mul_assign(&DVector::from_column_slice(scale));
    }
    let (k, nt) = (inst.users(), inst.antennas());
    match meta.head {
        Head::Mu => {
            let mu = normalize_mu(&raw.rows(0, nt).into_owned(), inst.power_budget())?;
            Ok((None, mu))
        }
        Head::LambdaMu => {
            let lambda = normalize_lambda(&raw.rows(0, k).into_owned(), inst.noise_power())?;
            let mu = normalize_mu(&raw.rows(meta.k_max, nt).into_owned(), inst.power_budget())?;
            Ok((Some(lambda), mu))
        }
    }
}

/// Forward pass, normalization and recovery. Returns the regulated
/// beamformer and its min-SINR.
pub fn predict_and_recover(
    inst: &ProblemInstance,
    weights: &NetworkWeights,
    config: &SolverConfig,
) -> Result<(BeamformingMatrix, f64)> {
    let rec = match predict_duals(inst, weights)? {
        (None, mu) => recover_from_mu(inst, &mu, config)?,
        (Some(lambda), mu) => {
            recover_from_lambda_mu(inst, &DualVariables::new(lambda, mu), config)?
        }
    };
    Ok((rec.w, rec.gamma))
}
