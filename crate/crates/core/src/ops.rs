//! Tape-free primitive operations.
//!
//! These are the forward kernels. [`crate::tape::Tape`] calls them and records
//! enough to run the matching backward kernels, also defined here.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp for probabilities fed to binary cross-entropy.
pub const BCE_EPS: f64 = 1e-12;
/// How far outside `[0, 1]` a probability may stray before bce rejects it.
pub const BCE_DOMAIN_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Softmax => 3,
            Activation::Identity => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Sigmoid,
            3 => Activation::Softmax,
            4 => Activation::Identity,
            _ => return None,
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "softmax" => Activation::Softmax,
            "identity" | "linear" => Activation::Identity,
            other => return Err(Error::Parameter(format!("unknown activation {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax + negative log-likelihood on logits, fused.
    CrossEntropy,
    Mse,
    /// Binary cross-entropy on probabilities.
    Bce,
}

/// What a loss compares against.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// One class index per row (cross-entropy only).
    Classes(Vec<usize>),
    /// Same shape as the output: one-hot rows, regression targets, or labels in `[0, 1]`.
    Dense(Tensor),
}

fn require_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Dimension(format!(
            "{what} must be 2-D, got shape {:?}",
            t.shape()
        ))),
    }
}

/// Row-major GEMM on raw buffers with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    // SAFETY: the callers pass buffers holding at least m*k and k*n elements
    // laid out according to the given strides; `c` is freshly allocated m*n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "matmul lhs")?;
    let (k2, n) = require_matrix(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {m}x{k} * {k2}x{n}"
        )));
    }
    let c = gemm(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1);
    Tensor::new_finite(vec![m, n], c, "matmul")
}

/// `grad_a = grad_c * b^T`, `grad_b = a^T * grad_c`.
pub(crate) fn matmul_backward(a: &Tensor, b: &Tensor, grad_c: &Tensor) -> (Tensor, Tensor) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let ga = gemm(m, n, k, grad_c.data(), n as isize, 1, b.data(), 1, n as isize);
    let gb = gemm(k, m, n, a.data(), 1, k as isize, grad_c.data(), n as isize, 1);
    (
        Tensor::matrix(m, k, ga).expect("shape by construction"),
        Tensor::matrix(k, n, gb).expect("shape by construction"),
    )
}

/// Adds a bias row (shape `[n]` or `[1, n]`) to every row of `x`.
pub fn add_row(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = x.cols();
    if bias.len() != n {
        return Err(Error::Dimension(format!(
            "bias of length {} does not match {} columns",
            bias.len(),
            n
        )));
    }
    let b = bias.data();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(n) {
        for (v, bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
    Tensor::new_finite(x.shape().to_vec(), out, "add_row")
}

pub(crate) fn add_row_backward_bias(grad: &Tensor, bias_shape: &[usize]) -> Tensor {
    let n = grad.cols();
    let mut gb = vec![0.0; n];
    for row in grad.data().chunks_exact(n) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    Tensor::new(bias_shape.to_vec(), gb).expect("bias shape")
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Result<Tensor> {
    let out = match kind {
        Activation::Identity => x.clone(),
        Activation::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Tanh => x.map(f64::tanh),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Softmax => {
            let n = x.cols();
            let mut data = x.data().to_vec();
            for row in data.chunks_exact_mut(n) {
                softmax_row(row);
            }
            Tensor::new(x.shape().to_vec(), data)?
        }
    };
    out.ensure_finite(kind.name())?;
    Ok(out)
}

/// Gradient of an activation given its input, its output and the upstream gradient.
pub(crate) fn activation_backward(
    kind: Activation,
    input: &Tensor,
    output: &Tensor,
    grad: &Tensor,
) -> Tensor {
    let g = grad.data();
    let data: Vec<f64> = match kind {
        Activation::Identity => g.to_vec(),
        // subgradient at exactly zero is 0
        Activation::Relu => input
            .data()
            .iter()
            .zip(g)
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::Tanh => output
            .data()
            .iter()
            .zip(g)
            .map(|(&y, &g)| g * (1.0 - y * y))
            .collect(),
        Activation::Sigmoid => output
            .data()
            .iter()
            .zip(g)
            .map(|(&y, &g)| g * y * (1.0 - y))
            .collect(),
        Activation::Softmax => {
            let n = output.cols();
            let mut out = vec![0.0; output.len()];
            for ((s, gr), o) in output
                .data()
                .chunks_exact(n)
                .zip(g.chunks_exact(n))
                .zip(out.chunks_exact_mut(n))
            {
                let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((o, &si), &gi) in o.iter_mut().zip(s).zip(gr) {
                    *o = si * (gi - dot);
                }
            }
            out
        }
    };
    Tensor::new(grad.shape().to_vec(), data).expect("same shape as grad")
}

/// Per-element keep/scale factors for inverted dropout.
///
/// Entry `i` is `0` with probability `rate` and `1 / (1 - rate)` otherwise,
/// drawn in order from a ChaCha8 stream seeded with `seed`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!(
            "dropout rate {rate} must lie in [0, 1)"
        )));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
        .collect())
}

/// Inverted dropout. Inactive dropout returns `x` unchanged (same buffer).
pub fn dropout(x: &Tensor, rate: f64, seed: u64, active: bool) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!(
            "dropout rate {rate} must lie in [0, 1)"
        )));
    }
    if !active || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), rate, seed)?;
    apply_mask(x, &mask)
}

pub(crate) fn apply_mask(x: &Tensor, mask: &[f64]) -> Result<Tensor> {
    let data = x.data().iter().zip(mask).map(|(v, m)| v * m).collect();
    Tensor::new_finite(x.shape().to_vec(), data, "dropout")
}

fn check_target_shape(output: &Tensor, target: &Tensor) -> Result<()> {
    if output.same_shape(target) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "output shape {:?} vs target shape {:?}",
            output.shape(),
            target.shape()
        )))
    }
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn check_classes(classes: &[usize], rows: usize, cols: usize) -> Result<()> {
    if classes.len() != rows {
        return Err(Error::Dimension(format!(
            "{} class labels for {rows} rows",
            classes.len()
        )));
    }
    if let Some(&bad) = classes.iter().find(|&&c| c >= cols) {
        return Err(Error::Dimension(format!(
            "class index {bad} out of range for {cols} logits"
        )));
    }
    Ok(())
}

/// Mean-reduced loss. Cross-entropy takes logits; bce takes probabilities.
pub fn loss(output: &Tensor, target: &Target, kind: LossKind) -> Result<f64> {
    let value = match (kind, target) {
        (LossKind::CrossEntropy, Target::Classes(classes)) => {
            let (rows, cols) = (output.rows(), output.cols());
            check_classes(classes, rows, cols)?;
            let total: f64 = (0..rows)
                .map(|r| -log_softmax_row(output.row(r))[classes[r]])
                .sum();
            total / rows as f64
        }
        (LossKind::CrossEntropy, Target::Dense(t)) => {
            check_target_shape(output, t)?;
            let rows = output.rows();
            let total: f64 = (0..rows)
                .map(|r| {
                    log_softmax_row(output.row(r))
                        .iter()
                        .zip(t.row(r))
                        .map(|(l, p)| -l * p)
                        .sum::<f64>()
                })
                .sum();
            total / rows as f64
        }
        (LossKind::Mse, Target::Dense(t)) => {
            check_target_shape(output, t)?;
            let total: f64 = output
                .data()
                .iter()
                .zip(t.data())
                .map(|(o, t)| (o - t) * (o - t))
                .sum();
            total / output.len() as f64
        }
        (LossKind::Bce, Target::Dense(t)) => {
            check_target_shape(output, t)?;
            check_probabilities(output, "bce input")?;
            check_probabilities(t, "bce target")?;
            let total: f64 = output
                .data()
                .iter()
                .zip(t.data())
                .map(|(&p, &y)| {
                    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum();
            total / output.len() as f64
        }
        (kind, Target::Classes(_)) => {
            return Err(Error::Contract(format!(
                "{kind:?} needs a dense target, got class indices"
            )))
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric(format!("{kind:?} loss is not finite")))
    }
}

fn check_probabilities(t: &Tensor, what: &str) -> Result<()> {
    match t
        .data()
        .iter()
        .find(|&&p| !(-BCE_DOMAIN_TOLERANCE..=1.0 + BCE_DOMAIN_TOLERANCE).contains(&p))
    {
        Some(p) => Err(Error::Domain(format!("{what} {p} lies outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Binary cross-entropy of `sigmoid(logits)` against `target`, computed from
/// the logits so that saturated outputs keep a usable gradient.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<f64> {
    check_target_shape(logits, target)?;
    check_probabilities(target, "bce target")?;
    let total: f64 = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&l, &y)| l.max(0.0) - y * l + (-l.abs()).exp().ln_1p())
        .sum();
    let value = total / logits.len() as f64;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric("bce loss is not finite".into()))
    }
}

pub(crate) fn bce_with_logits_backward(logits: &Tensor, target: &Tensor) -> Tensor {
    let n = logits.len() as f64;
    logits
        .zip_map(target, |l, y| (sigmoid(l) - y) / n)
        .expect("shape checked by the forward pass")
}

/// Gradient of [`loss`] with respect to `output`.
pub(crate) fn loss_backward(output: &Tensor, target: &Target, kind: LossKind) -> Tensor {
    let n = output.len() as f64;
    let data: Vec<f64> = match (kind, target) {
        (LossKind::CrossEntropy, _) => {
            let (rows, cols) = (output.rows(), output.cols());
            let mut g = Vec::with_capacity(output.len());
            for r in 0..rows {
                let mut p = output.row(r).to_vec();
                softmax_row(&mut p);
                match target {
                    Target::Classes(c) => p[c[r]] -= 1.0,
                    Target::Dense(t) => {
                        let mass: f64 = t.row(r).iter().sum();
                        for (pi, ti) in p.iter_mut().zip(t.row(r)) {
                            *pi = *pi * mass - ti;
                        }
                    }
                }
                g.extend(p.into_iter().map(|v| v / rows as f64));
            }
            debug_assert_eq!(g.len(), rows * cols);
            g
        }
        (LossKind::Mse, Target::Dense(t)) => output
            .data()
            .iter()
            .zip(t.data())
            .map(|(o, t)| 2.0 * (o - t) / n)
            .collect(),
        (LossKind::Bce, Target::Dense(t)) => output
            .data()
            .iter()
            .zip(t.data())
            .map(|(&p, &y)| {
                if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                    0.0
                } else {
                    (-y / p + (1.0 - y) / (1.0 - p)) / n
                }
            })
            .collect(),
        (_, Target::Classes(_)) => unreachable!("rejected by the forward pass"),
    };
    Tensor::new(output.shape().to_vec(), data).expect("same shape as output")
}
