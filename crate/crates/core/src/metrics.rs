//! Approximate-discontinuity measurements.
//!
//! * `d_m`: the minimum pairwise L1 distance between model outputs over a
//!   dataset. A positive value means the model separates every input.
//! * Expansion ratios: for a step size η, compare how far the output moves
//!   per unit of L1 input change along the FGSM direction (`e_a`) versus a
//!   random Gaussian direction (`e_n`), and report `r = e_a / e_n`.
//!
//! All measurement runs in `f64` with dropout inactive unless a sweep asks
//! for it. Sweeps are deterministic regardless of thread count: every random
//! draw is keyed by `(input index, noise seed)` and reductions run in index
//! order.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dedup_indices, Dataset};
use crate::error::{Error, Result};
use crate::model::{DropoutMode, Model};
use crate::ops::{LossKind, Target};
use crate::rng;
use crate::tape::Tape;
use crate::tensor::{l1_distance, Tensor};
use crate::train::predict;

/// Input distances below this are treated as no perturbation at all.
pub const MIN_INPUT_DISTANCE: f64 = 1e-12;
/// Smallest step size a sweep accepts; below it float error dominates.
pub const ETA_FLOOR: f64 = 1e-7;

// --- injectivity witness -------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMinimum {
    pub d_m: f64,
    /// Lexicographically first pair attaining the minimum, `i < j`.
    pub pair: (usize, usize),
    /// The input set contained exact duplicates (so `d_m` is forced to 0).
    pub duplicate_inputs: bool,
}

/// Exact minimum L1 distance over all row pairs of `outputs`.
///
/// Rows are scanned in parallel; ties resolve to the smallest `(i, j)`, so
/// the answer matches a sequential double loop bit for bit.
pub fn min_pairwise_l1(outputs: &Tensor) -> Result<(f64, (usize, usize))> {
    let n = outputs.rows();
    if n < 2 {
        return Err(Error::Contract(format!(
            "need at least two rows for a pairwise minimum, got {n}"
        )));
    }
    let best = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            let a = outputs.row(i);
            let mut best = (f64::INFINITY, (i, i + 1));
            for j in i + 1..n {
                let d = l1_distance(a, outputs.row(j));
                if d < best.0 {
                    best = (d, (i, j));
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, (usize::MAX, usize::MAX)),
            |x, y| {
                if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) {
                    y
                } else {
                    x
                }
            },
        );
    Ok(best)
}

/// `d_m` of `model` over every input of `dataset` (evaluation mode).
///
/// The caller is expected to deduplicate first; duplicates are detected,
/// logged and flagged in the result.
pub fn min_pairwise_output_distance(model: &Model, dataset: &Dataset) -> Result<PairwiseMinimum> {
    if dataset.len() < 2 {
        return Err(Error::Contract(format!(
            "d_m needs at least two inputs, got {}",
            dataset.len()
        )));
    }
    let (_, dropped) = dedup_indices(dataset);
    if dropped > 0 {
        log::warn!("{dropped} duplicate inputs present; d_m will be 0");
    }
    let outputs = predict(model, dataset.inputs())?;
    let (d_m, pair) = min_pairwise_l1(&outputs)?;
    Ok(PairwiseMinimum {
        d_m,
        pair,
        duplicate_inputs: dropped > 0,
    })
}

// --- perturbations and expansions ----------------------------------------

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x + η · sign(g)` with `sign(0) = 0`, optionally clipped to `[0, 1]`.
pub fn fgsm_step(x: &[f64], gradient: &[f64], eta: f64, clip: bool) -> Result<Vec<f64>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Parameter(format!("eta {eta} must be >= 0")));
    }
    if x.len() != gradient.len() {
        return Err(Error::Dimension(format!(
            "input of width {} vs gradient of width {}",
            x.len(),
            gradient.len()
        )));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("input gradient is not finite".into()));
    }
    Ok(x.iter()
        .zip(gradient)
        .map(|(&xi, &g)| clip_value(xi + eta * sign(g), clip))
        .collect())
}

fn clip_value(v: f64, clip: bool) -> f64 {
    if clip {
        v.clamp(0.0, 1.0)
    } else {
        v
    }
}

/// Standard-normal direction used by [`random_perturb`].
pub fn noise_direction(len: usize, noise_seed: u64) -> Vec<f64> {
    let mut r = rng::stream(noise_seed, &[0x2A1D]);
    (0..len).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

/// `x + η · ε`, `ε ~ N(0, I)` drawn from `noise_seed`.
pub fn random_perturb(x: &[f64], eta: f64, noise_seed: u64) -> Result<Vec<f64>> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Parameter(format!("eta {eta} must be > 0")));
    }
    Ok(perturb_along(x, &noise_direction(x.len(), noise_seed), eta, false))
}

fn perturb_along(x: &[f64], direction: &[f64], eta: f64, clip: bool) -> Vec<f64> {
    x.iter()
        .zip(direction)
        .map(|(&xi, &d)| clip_value(xi + eta * d, clip))
        .collect()
}

/// `‖O(x) − O(x̃)‖₁ / ‖x − x̃‖₁` from precomputed outputs.
///
/// Both `e_a` and `e_n` are this function; only the perturbed point differs.
pub fn expansion(out_x: &[f64], out_p: &[f64], x: &[f64], x_p: &[f64]) -> Result<f64> {
    let din = l1_distance(x, x_p);
    if !din.is_finite() || din < MIN_INPUT_DISTANCE {
        return Err(Error::Instability(format!(
            "input distance {din:e} below {MIN_INPUT_DISTANCE:e}"
        )));
    }
    let dout = l1_distance(out_x, out_p);
    let e = dout / din;
    if e.is_finite() {
        Ok(e)
    } else {
        Err(Error::Instability("non-finite expansion".into()))
    }
}

/// `r = e_a / e_n`.
pub fn expansion_ratio(e_a: f64, e_n: f64) -> Result<f64> {
    if e_n == 0.0 || !e_n.is_finite() || !e_a.is_finite() {
        return Err(Error::Instability(format!(
            "cannot form ratio of e_a={e_a} and e_n={e_n}"
        )));
    }
    Ok(e_a / e_n)
}

/// The ratio written out as one fraction:
/// `‖O(x)−O(x_a)‖₁ · ‖x−x'‖₁ / (‖O(x)−O(x')‖₁ · ‖x−x_a‖₁)`.
pub fn expansion_ratio_composite(
    out_x: &[f64],
    out_a: &[f64],
    out_n: &[f64],
    x: &[f64],
    x_a: &[f64],
    x_n: &[f64],
) -> f64 {
    (l1_distance(out_x, out_a) * l1_distance(x, x_n))
        / (l1_distance(out_x, out_n) * l1_distance(x, x_a))
}

// --- probes: how each model family is measured ---------------------------

/// The loss whose input gradient defines the FGSM direction.
#[derive(Clone, Copy, Debug)]
pub enum LossBinding<'a> {
    /// Cross-entropy against the true class (classifiers).
    CrossEntropy,
    /// Mean squared error against a dense target (autoencoders, denoisers).
    Mse,
    /// Binary cross-entropy against a real/fake label (discriminators).
    Bce,
    /// Non-saturating generator loss `bce(D((G(z)+1)/2), 1)` through a frozen
    /// discriminator; the perturbation acts on the latent `z`.
    NonSaturating { discriminator: &'a Model },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleTarget {
    Class(usize),
    Dense(Vec<f64>),
    /// For bindings that carry their own target.
    Implicit,
}

/// One measured point.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: SampleTarget,
}

/// A frozen model plus the rule for differentiating it.
///
/// `suffix` is appended to every input before the forward pass and is never
/// perturbed (the diffusion denoiser's timestep element).
#[derive(Clone, Debug)]
pub struct Probe<'a> {
    pub model: &'a Model,
    pub binding: LossBinding<'a>,
    pub suffix: Vec<f64>,
}

impl<'a> Probe<'a> {
    pub fn new(model: &'a Model, binding: LossBinding<'a>) -> Self {
        Probe {
            model,
            binding,
            suffix: Vec::new(),
        }
    }

    pub fn with_suffix(mut self, suffix: Vec<f64>) -> Self {
        self.suffix = suffix;
        self
    }

    /// Width of the perturbed part of the input.
    pub fn input_dim(&self) -> usize {
        self.model.input_dim() - self.suffix.len()
    }

    fn full_input(&self, x: &[f64]) -> Result<Tensor> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "probe expects inputs of width {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut row = x.to_vec();
        row.extend_from_slice(&self.suffix);
        Tensor::row_vector(&row)
    }

    pub fn output(&self, x: &[f64], dropout: DropoutMode) -> Result<Vec<f64>> {
        Ok(self.model.forward(&self.full_input(x)?, dropout)?.into_vec())
    }

    /// Outputs for many inputs at once (evaluation mode only).
    pub fn outputs(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = self.model.input_dim();
        let mut data = Vec::with_capacity(xs.len() * n);
        for x in xs {
            data.extend(self.full_input(x)?.into_vec());
        }
        let y = predict(self.model, &Tensor::matrix(xs.len(), n, data)?)?;
        Ok((0..xs.len()).map(|i| y.row(i).to_vec()).collect())
    }

    fn record(&self, tape: &mut Tape, x: &[f64], target: &SampleTarget, dropout: DropoutMode) -> Result<(crate::tape::Var, crate::tape::Var)> {
        let input = tape.leaf(self.full_input(x)?, true);
        let loss = match (self.binding, target) {
            (LossBinding::CrossEntropy, SampleTarget::Class(c)) => {
                self.model
                    .record_loss(tape, input, Target::Classes(vec![*c]), LossKind::CrossEntropy, dropout, false)?
                    .0
            }
            (LossBinding::CrossEntropy, SampleTarget::Dense(t)) => {
                let t = Target::Dense(Tensor::row_vector(t)?);
                self.model.record_loss(tape, input, t, LossKind::CrossEntropy, dropout, false)?.0
            }
            (LossBinding::Mse, SampleTarget::Dense(t)) => {
                let t = Target::Dense(Tensor::row_vector(t)?);
                self.model.record_loss(tape, input, t, LossKind::Mse, dropout, false)?.0
            }
            (LossBinding::Bce, SampleTarget::Dense(t)) => {
                let t = Target::Dense(Tensor::row_vector(t)?);
                self.model.record_loss(tape, input, t, LossKind::Bce, dropout, false)?.0
            }
            (LossBinding::Bce, SampleTarget::Class(c)) => {
                let t = Target::Dense(Tensor::row_vector(&[*c as f64])?);
                self.model.record_loss(tape, input, t, LossKind::Bce, dropout, false)?.0
            }
            (LossBinding::NonSaturating { discriminator }, _) => {
                let rec = self.model.record(tape, input, dropout, false)?;
                let scaled = tape.affine(rec.output, 0.5, 0.5)?;
                let ones = Target::Dense(Tensor::row_vector(&[1.0])?);
                discriminator
                    .record_loss(tape, scaled, ones, LossKind::Bce, DropoutMode::Inactive, false)?
                    .0
            }
            (binding, target) => {
                return Err(Error::Contract(format!(
                    "target {target:?} does not fit loss binding {binding:?}"
                )))
            }
        };
        Ok((input, loss))
    }

    /// Scalar loss at `x`.
    pub fn loss(&self, x: &[f64], target: &SampleTarget, dropout: DropoutMode) -> Result<f64> {
        let mut tape = Tape::new();
        let (_, loss) = self.record(&mut tape, x, target, dropout)?;
        tape.value(loss).item()
    }

    /// `∇_x L` restricted to the perturbed part of the input.
    pub fn input_gradient(&self, x: &[f64], target: &SampleTarget, dropout: DropoutMode) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (input, loss) = self.record(&mut tape, x, target, dropout)?;
        let grads = tape.backward(loss)?;
        let mut g = grads.get_or_zeros(input, tape.value(input)).into_vec();
        g.truncate(self.input_dim());
        Ok(g)
    }
}

/// FGSM adversarial point for one sample.
pub fn fgsm_perturb(
    probe: &Probe<'_>,
    sample: &Sample,
    eta: f64,
    clip: bool,
    dropout: DropoutMode,
) -> Result<Vec<f64>> {
    let g = probe.input_gradient(&sample.input, &sample.target, dropout)?;
    fgsm_step(&sample.input, &g, eta, clip)
}

pub fn expansion_adversarial(probe: &Probe<'_>, x: &[f64], x_a: &[f64], dropout: DropoutMode) -> Result<f64> {
    expansion(&probe.output(x, dropout)?, &probe.output(x_a, dropout)?, x, x_a)
}

pub fn expansion_random(probe: &Probe<'_>, x: &[f64], x_n: &[f64], dropout: DropoutMode) -> Result<f64> {
    expansion(&probe.output(x, dropout)?, &probe.output(x_n, dropout)?, x, x_n)
}

/// Fraction of samples (with a nonzero input gradient) whose loss rises
/// after an FGSM step of size `eta`.
pub fn fgsm_ascent_fraction(probe: &Probe<'_>, samples: &[Sample], eta: f64) -> Result<f64> {
    let mut tested = 0usize;
    let mut rose = 0usize;
    for s in samples {
        let g = probe.input_gradient(&s.input, &s.target, DropoutMode::Inactive)?;
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        tested += 1;
        let x_a = fgsm_step(&s.input, &g, eta, false)?;
        let before = probe.loss(&s.input, &s.target, DropoutMode::Inactive)?;
        let after = probe.loss(&x_a, &s.target, DropoutMode::Inactive)?;
        if after > before {
            rose += 1;
        }
    }
    if tested == 0 {
        return Err(Error::Contract("no sample has a nonzero gradient".into()));
    }
    Ok(rose as f64 / tested as f64)
}

// --- sweeps ----------------------------------------------------------------

/// `points` log-spaced values from `max` down to `min` inclusive.
pub fn log_grid(max: f64, min: f64, points: usize) -> Result<Vec<f64>> {
    if !(max > 0.0 && min > 0.0 && max > min) || points < 2 {
        return Err(Error::Config(format!(
            "need max > min > 0 and at least two points (got {max}, {min}, {points})"
        )));
    }
    let (hi, lo) = (max.log10(), min.log10());
    Ok((0..points)
        .map(|i| {
            if i == 0 {
                max
            } else if i == points - 1 {
                min
            } else {
                10f64.powf(hi + (lo - hi) * i as f64 / (points - 1) as f64)
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaSweepConfig {
    /// Strictly decreasing step sizes.
    pub eta_grid: Vec<f64>,
    pub num_inputs: usize,
    pub num_noise_seeds: usize,
    /// Base of the per-(input, seed) noise streams.
    pub noise_seed: u64,
    /// Clip perturbed points into `[0, 1]`.
    #[serde(default)]
    pub clip: bool,
    /// Measure with dropout active, one fixed mask per input.
    #[serde(default)]
    pub dropout_active: bool,
    /// Keep every per-sample `(e_a, e_n, r)` in the result.
    #[serde(default)]
    pub keep_samples: bool,
}

impl Default for EtaSweepConfig {
    fn default() -> Self {
        EtaSweepConfig {
            eta_grid: log_grid(1e-1, 1e-5, 13).expect("valid default grid"),
            num_inputs: 200,
            num_noise_seeds: 5,
            noise_seed: 0,
            clip: false,
            dropout_active: false,
            keep_samples: false,
        }
    }
}

impl EtaSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta_grid.is_empty() {
            return Err(Error::Config("eta grid is empty".into()));
        }
        if self.eta_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Config("eta values must be positive".into()));
        }
        if self.eta_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("eta grid must be strictly decreasing".into()));
        }
        if let Some(e) = self.eta_grid.iter().find(|&&e| e < ETA_FLOOR) {
            return Err(Error::Config(format!(
                "eta {e:e} is below the floor {ETA_FLOOR:e}; results there are dominated by rounding"
            )));
        }
        if self.num_inputs == 0 || self.num_noise_seeds == 0 {
            return Err(Error::Config("need at least one input and one noise seed".into()));
        }
        Ok(())
    }
}

/// Mean and spread of `r` over inputs for one `(eta, noise seed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub noise_seed: usize,
    pub mean_r: f64,
    pub std_r: f64,
    pub n_used: usize,
    pub n_discarded: usize,
}

/// Aggregate over noise seeds for one eta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaSummary {
    pub eta: f64,
    /// Mean of the per-seed means.
    pub mean_r: f64,
    /// Sample standard deviation of the per-seed means.
    pub std_r: f64,
    pub n_discarded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub eta: f64,
    pub noise_seed: usize,
    pub input: usize,
    pub e_a: f64,
    pub e_n: f64,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Rows in descending eta, then ascending seed.
    pub rows: Vec<SweepRow>,
    pub per_eta: Vec<EtaSummary>,
    pub instability_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleRecord>,
}

impl SweepResult {
    pub fn etas(&self) -> Vec<f64> {
        self.per_eta.iter().map(|s| s.eta).collect()
    }

    pub fn mean_curve(&self) -> Vec<(f64, f64)> {
        self.per_eta.iter().map(|s| (s.eta, s.mean_r)).collect()
    }

    /// Grand mean at the grid point closest (in log space) to `eta`.
    pub fn mean_at(&self, eta: f64) -> Option<f64> {
        self.per_eta
            .iter()
            .min_by(|a, b| {
                let da = (a.eta.log10() - eta.log10()).abs();
                let db = (b.eta.log10() - eta.log10()).abs();
                da.total_cmp(&db)
            })
            .map(|s| s.mean_r)
    }

    /// max / min of the grand means across the grid.
    pub fn variation(&self) -> f64 {
        let max = self.per_eta.iter().map(|s| s.mean_r).fold(f64::NEG_INFINITY, f64::max);
        let min = self.per_eta.iter().map(|s| s.mean_r).fold(f64::INFINITY, f64::min);
        max / min
    }
}

type Measured = std::result::Result<(f64, f64, f64), ()>;

/// Per-input measurements over the whole grid, `[eta][seed]`.
fn measure_input(
    probe: &Probe<'_>,
    index: usize,
    sample: &Sample,
    cfg: &EtaSweepConfig,
) -> Result<Vec<Vec<Measured>>> {
    let grid = cfg.eta_grid.len();
    let seeds = cfg.num_noise_seeds;
    let all_discarded = || Ok(vec![vec![Err(()); seeds]; grid]);
    let dropout = if cfg.dropout_active {
        DropoutMode::Active {
            seed: rng::derive_seed(cfg.noise_seed, &[0x3A5C, index as u64]),
        }
    } else {
        DropoutMode::Inactive
    };
    let x = &sample.input;
    let keep_or_discard = |r: Result<Vec<f64>>| -> Result<Option<Vec<f64>>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::Numeric(_) | Error::Instability(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let Some(gradient) = keep_or_discard(probe.input_gradient(x, &sample.target, dropout))? else {
        return all_discarded();
    };
    let Some(out_x) = keep_or_discard(probe.output(x, dropout))? else {
        return all_discarded();
    };
    let directions: Vec<Vec<f64>> = (0..seeds)
        .map(|k| noise_direction(x.len(), rng::derive_seed(cfg.noise_seed, &[index as u64, k as u64])))
        .collect();

    let mut table = Vec::with_capacity(grid);
    for &eta in &cfg.eta_grid {
        let x_a = fgsm_step(x, &gradient, eta, cfg.clip)?;
        let e_a = match keep_or_discard(probe.output(&x_a, dropout))? {
            Some(out_a) => expansion(&out_x, &out_a, x, &x_a).ok().filter(|&e| e > 0.0),
            None => None,
        };
        let mut row = Vec::with_capacity(seeds);
        for dir in &directions {
            let x_n = perturb_along(x, dir, eta, cfg.clip);
            let measured = match (e_a, keep_or_discard(probe.output(&x_n, dropout))?) {
                (Some(e_a), Some(out_n)) => expansion(&out_x, &out_n, x, &x_n)
                    .ok()
                    .filter(|&e| e > 0.0)
                    .and_then(|e_n| expansion_ratio(e_a, e_n).ok().map(|r| (e_a, e_n, r)))
                    .ok_or(()),
                _ => Err(()),
            };
            row.push(measured);
        }
        table.push(row);
    }
    Ok(table)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Expansion-ratio sweep over the first `cfg.num_inputs` samples.
///
/// For each input the FGSM direction is computed once; for each eta and
/// noise seed one `r` is measured. A sample whose output, gradient or
/// denominator is non-finite or vanishes is discarded and counted. If more
/// than half the samples at one eta are discarded the sweep fails.
pub fn eta_sweep(probe: &Probe<'_>, samples: &[Sample], cfg: &EtaSweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.num_inputs > samples.len() {
        return Err(Error::Contract(format!(
            "sweep wants {} inputs but only {} are available",
            cfg.num_inputs,
            samples.len()
        )));
    }
    let per_input: Vec<Vec<Vec<Measured>>> = samples[..cfg.num_inputs]
        .par_iter()
        .enumerate()
        .map(|(i, s)| measure_input(probe, i, s, cfg))
        .collect::<Result<_>>()?;

    let seeds = cfg.num_noise_seeds;
    let mut rows = Vec::with_capacity(cfg.eta_grid.len() * seeds);
    let mut per_eta = Vec::with_capacity(cfg.eta_grid.len());
    let mut kept = Vec::new();
    let mut instability_count = 0;
    for (e, &eta) in cfg.eta_grid.iter().enumerate() {
        let mut seed_means = Vec::with_capacity(seeds);
        let mut discarded_here = 0;
        for k in 0..seeds {
            let mut rs = Vec::with_capacity(cfg.num_inputs);
            for (i, table) in per_input.iter().enumerate() {
                match table[e][k] {
                    Ok((e_a, e_n, r)) => {
                        rs.push(r);
                        if cfg.keep_samples {
                            kept.push(SampleRecord {
                                eta,
                                noise_seed: k,
                                input: i,
                                e_a,
                                e_n,
                                r,
                            });
                        }
                    }
                    Err(()) => discarded_here += 1,
                }
            }
            let n_discarded = cfg.num_inputs - rs.len();
            let (mean_r, std_r) = mean_std(&rs);
            if !rs.is_empty() {
                seed_means.push(mean_r);
            }
            rows.push(SweepRow {
                eta,
                noise_seed: k,
                mean_r,
                std_r,
                n_used: rs.len(),
                n_discarded,
            });
        }
        let total = cfg.num_inputs * seeds;
        if 2 * discarded_here > total {
            return Err(Error::Sweep {
                eta,
                discarded: discarded_here,
                total,
            });
        }
        instability_count += discarded_here;
        let (mean_r, std_r) = mean_std(&seed_means);
        per_eta.push(EtaSummary {
            eta,
            mean_r,
            std_r,
            n_discarded: discarded_here,
        });
    }
    Ok(SweepResult {
        rows,
        per_eta,
        instability_count,
        samples: kept,
    })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman correlation between `-log10(eta)` and the mean ratio.
pub fn trend_correlation(result: &SweepResult) -> f64 {
    let x: Vec<f64> = result.per_eta.iter().map(|s| -s.eta.log10()).collect();
    let y: Vec<f64> = result.per_eta.iter().map(|s| s.mean_r).collect();
    spearman(&x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, ModelSpec};
    use crate::ops::Activation;

    fn linear(weights: &[f64], rows: usize, cols: usize) -> Model {
        let spec = ModelSpec::new(rows, vec![], cols, Activation::Identity, Activation::Identity);
        Model::from_layers(
            spec,
            vec![Layer {
                weight: Tensor::matrix(rows, cols, weights.to_vec()).unwrap(),
                bias: Tensor::zeros(&[cols]).unwrap(),
            }],
        )
        .unwrap()
    }

    fn identity(n: usize) -> Model {
        linear(Tensor::identity(n).unwrap().data(), n, n)
    }

    #[test]
    fn pairwise_example() {
        let out = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(min_pairwise_l1(&out).unwrap(), (1.0, (0, 1)));
        let one = Tensor::from_rows(&[vec![0.0]]).unwrap();
        assert!(matches!(min_pairwise_l1(&one).unwrap_err(), Error::Contract(_)));
    }

    #[test]
    fn duplicates_force_zero() {
        let d = Dataset::new(
            "dup",
            Tensor::from_rows(&[vec![0.5, 0.5], vec![0.1, 0.2], vec![0.5, 0.5]]).unwrap(),
            vec![0, 0, 0],
            1,
        )
        .unwrap();
        let m = identity(2);
        let r = min_pairwise_output_distance(&m, &d).unwrap();
        assert_eq!(r.d_m, 0.0);
        assert!(r.duplicate_inputs);
        assert_eq!(r.pair, (0, 2));
    }

    #[test]
    fn fgsm_examples() {
        let x = [0.0, 0.0, 0.0];
        let xa = fgsm_step(&x, &[0.5, -2.0, 0.0], 0.1, false).unwrap();
        assert_eq!(xa, vec![0.1, -0.1, 0.0]);
        assert_eq!(fgsm_step(&[0.3, 0.4], &[1.0, -1.0], 0.0, false).unwrap(), vec![0.3, 0.4]);
        assert_eq!(fgsm_step(&[0.3, 0.4], &[0.0, 0.0], 0.5, false).unwrap(), vec![0.3, 0.4]);
        assert!(matches!(
            fgsm_step(&x, &[f64::NAN, 0.0, 0.0], 0.1, false).unwrap_err(),
            Error::Numeric(_)
        ));
        // unclipped by default, clipped on request
        assert_eq!(fgsm_step(&[0.95], &[1.0], 0.1, false).unwrap()[0], 0.95 + 0.1);
        assert_eq!(fgsm_step(&[0.95], &[1.0], 0.1, true).unwrap()[0], 1.0);
    }

    #[test]
    fn random_perturb_is_seeded() {
        let x = vec![0.5; 10];
        assert_eq!(random_perturb(&x, 0.1, 4).unwrap(), random_perturb(&x, 0.1, 4).unwrap());
        assert_ne!(random_perturb(&x, 0.1, 4).unwrap(), random_perturb(&x, 0.1, 5).unwrap());
        assert!(random_perturb(&x, 0.0, 4).is_err());
    }

    #[test]
    fn expansion_examples() {
        let m = identity(3);
        let p = Probe::new(&m, LossBinding::Mse);
        let x = [0.2, 0.4, 0.6];
        let xa = [0.3, 0.3, 0.6];
        assert_eq!(expansion_adversarial(&p, &x, &xa, DropoutMode::Inactive).unwrap(), 1.0);
        assert_eq!(expansion_random(&p, &x, &xa, DropoutMode::Inactive).unwrap(), 1.0);
        assert!(matches!(
            expansion_adversarial(&p, &x, &x, DropoutMode::Inactive).unwrap_err(),
            Error::Instability(_)
        ));

        let constant = linear(&[0.0; 9], 3, 3);
        let pc = Probe::new(&constant, LossBinding::Mse);
        assert_eq!(expansion_random(&pc, &x, &xa, DropoutMode::Inactive).unwrap(), 0.0);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(expansion_ratio(4.0, 2.0).unwrap(), 2.0);
        assert!(matches!(expansion_ratio(1.0, 0.0).unwrap_err(), Error::Instability(_)));
    }

    #[test]
    fn linear_expansion_is_eta_free() {
        // e_a = ||W d||_1 / ||d||_1 for f(x) = x W
        let w = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        let m = linear(&w, 2, 3);
        let p = Probe::new(&m, LossBinding::Mse);
        let x = [0.4, 0.7];
        let d = [1.0, -1.0];
        let closed = {
            let wd: Vec<f64> = (0..3).map(|j| d[0] * w[j] + d[1] * w[3 + j]).collect();
            wd.iter().map(|v| v.abs()).sum::<f64>() / 2.0
        };
        for eta in [1e-1, 1e-3, 1e-5] {
            let xa: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + eta * b).collect();
            let e = expansion_adversarial(&p, &x, &xa, DropoutMode::Inactive).unwrap();
            assert!((e - closed).abs() <= 1e-9 * closed, "eta {eta}: {e} vs {closed}");
        }
    }

    #[test]
    fn composite_matches_ratio() {
        let ox = [0.1, 0.2];
        let oa = [0.4, -0.2];
        let on = [0.15, 0.25];
        let x = [0.0, 0.0];
        let xa = [0.1, -0.1];
        let xn = [0.03, 0.05];
        let r = expansion_ratio(
            expansion(&ox, &oa, &x, &xa).unwrap(),
            expansion(&ox, &on, &x, &xn).unwrap(),
        )
        .unwrap();
        let c = expansion_ratio_composite(&ox, &oa, &on, &x, &xa, &xn);
        assert!((r - c).abs() <= 1e-12 * c);
    }

    #[test]
    fn grid_defaults() {
        let g = EtaSweepConfig::default().eta_grid;
        assert_eq!(g.len(), 13);
        assert_eq!(g[0], 1e-1);
        assert_eq!(g[12], 1e-5);
        for w in g.windows(2) {
            assert!((w[0] / w[1] - 10f64.powf(1.0 / 3.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = EtaSweepConfig::default();
        cfg.eta_grid = vec![1e-2, 1e-1];
        assert!(cfg.validate().is_err());
        cfg.eta_grid = vec![1e-1, 1e-8];
        assert!(cfg.validate().is_err());
        cfg.eta_grid = vec![1e-1];
        cfg.num_noise_seeds = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sweep_needs_enough_inputs() {
        let m = identity(2);
        let p = Probe::new(&m, LossBinding::Mse);
        let s = vec![Sample {
            input: vec![0.1, 0.2],
            target: SampleTarget::Dense(vec![0.0, 0.0]),
        }];
        let cfg = EtaSweepConfig {
            num_inputs: 2,
            ..Default::default()
        };
        assert!(matches!(eta_sweep(&p, &s, &cfg).unwrap_err(), Error::Contract(_)));
    }

    #[test]
    fn sweep_fails_when_gradients_vanish() {
        // gradient of mse is zero when the target equals the output
        let m = identity(2);
        let p = Probe::new(&m, LossBinding::Mse);
        let s = vec![Sample {
            input: vec![0.1, 0.2],
            target: SampleTarget::Dense(vec![0.1, 0.2]),
        }];
        let cfg = EtaSweepConfig {
            num_inputs: 1,
            num_noise_seeds: 2,
            ..Default::default()
        };
        assert!(matches!(eta_sweep(&p, &s, &cfg).unwrap_err(), Error::Sweep { .. }));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
