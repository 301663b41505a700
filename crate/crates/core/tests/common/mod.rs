//! Helpers shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use discontinuity::ops::{Activation, LossKind, Target};
use discontinuity::tape::Tape;
use discontinuity::{DropoutMode, Model, ModelSpec, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const MIN_ANALYTIC: f64 = 1e-8;
pub const KINK_MARGIN: f64 = 1e-6;

/// A random small network, input batch and loss.
pub struct GradCase {
    pub model: Model,
    pub x: Tensor,
    pub target: Target,
    pub kind: LossKind,
}

pub fn random_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.gen_range(1..=4);
    let input_dim = rng.gen_range(1..=32);
    let hidden: Vec<usize> = (1..layers).map(|_| rng.gen_range(1..=32)).collect();
    let hidden_act = *[Activation::Relu, Activation::Tanh, Activation::Sigmoid]
        .choose(&mut rng)
        .unwrap();
    let (out_act, kind) = *[
        (Activation::Identity, LossKind::Mse),
        (Activation::Tanh, LossKind::Mse),
        (Activation::Identity, LossKind::CrossEntropy),
        (Activation::Softmax, LossKind::CrossEntropy),
        (Activation::Softmax, LossKind::Mse),
        (Activation::Sigmoid, LossKind::Bce),
    ]
    .choose(&mut rng)
    .unwrap();
    let min_out = if kind == LossKind::CrossEntropy || out_act == Activation::Softmax { 2 } else { 1 };
    let output_dim = rng.gen_range(min_out..=32);
    let spec = ModelSpec::new(input_dim, hidden, output_dim, hidden_act, out_act).with_seed(seed);
    let built = Model::build(spec.clone()).unwrap();
    // nonzero biases so their gradients are exercised
    let params: Vec<f64> = built
        .flat_parameters()
        .into_iter()
        .map(|p| p + rng.gen_range(-0.1..0.1))
        .collect();
    let model = Model::from_flat(spec, &params).unwrap();
    let batch = rng.gen_range(1..=4);
    let x = Tensor::matrix(batch, input_dim, (0..batch * input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .unwrap();
    let target = match kind {
        LossKind::CrossEntropy => Target::Classes((0..batch).map(|_| rng.gen_range(0..output_dim)).collect()),
        LossKind::Bce => Target::Dense(
            Tensor::matrix(batch, output_dim, (0..batch * output_dim).map(|_| rng.gen_range(0.0..1.0)).collect())
                .unwrap(),
        ),
        LossKind::Mse => Target::Dense(
            Tensor::matrix(batch, output_dim, (0..batch * output_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap(),
        ),
    };
    GradCase { model, x, target, kind }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub checked: usize,
    pub failures: usize,
    pub worst: f64,
    pub skipped_kink: bool,
}

fn near_kink(model: &Model, x: &Tensor) -> bool {
    model.spec().hidden_activation == Activation::Relu
        && model
            .hidden_pre_activations(x)
            .unwrap()
            .iter()
            .any(|z| z.data().iter().any(|v| v.abs() < KINK_MARGIN))
}

/// Compares every parameter and input gradient against central differences.
pub fn check_case(case: &GradCase) -> GradReport {
    let GradCase { model, x, target, kind } = case;
    let mut report = GradReport::default();
    if near_kink(model, x) {
        report.skipped_kink = true;
        return report;
    }

    let mut tape = Tape::new();
    let input = tape.leaf(x.clone(), true);
    let (loss, rec) = model
        .record_loss(&mut tape, input, target.clone(), *kind, DropoutMode::Inactive, true)
        .unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut analytic_params = Vec::new();
    for (i, &(w, b)) in rec.params.iter().enumerate() {
        let layer = &model.layers()[i];
        analytic_params.extend_from_slice(grads.get_or_zeros(w, &layer.weight).data());
        analytic_params.extend_from_slice(grads.get_or_zeros(b, &layer.bias).data());
    }
    let analytic_input = grads.get_or_zeros(input, x);

    let mut compare = |analytic: f64, numeric: f64| {
        if analytic.abs() <= MIN_ANALYTIC {
            return;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        report.checked += 1;
        report.worst = report.worst.max(rel);
        if !(rel < REL_TOL) {
            report.failures += 1;
        }
    };

    let spec = model.spec().clone();
    let params = model.flat_parameters();
    let loss_with = |p: &[f64], xin: &Tensor| -> f64 {
        Model::from_flat(spec.clone(), p)
            .unwrap()
            .loss(xin, target, *kind, DropoutMode::Inactive)
            .unwrap()
    };
    let mut p = params.clone();
    for k in 0..params.len() {
        p[k] = params[k] + FD_STEP;
        let up = loss_with(&p, x);
        p[k] = params[k] - FD_STEP;
        let down = loss_with(&p, x);
        p[k] = params[k];
        compare(analytic_params[k], (up - down) / (2.0 * FD_STEP));
    }
    let mut xp = x.clone();
    for k in 0..x.len() {
        let orig = x.data()[k];
        xp.data_mut()[k] = orig + FD_STEP;
        let up = loss_with(&params, &xp);
        xp.data_mut()[k] = orig - FD_STEP;
        let down = loss_with(&params, &xp);
        xp.data_mut()[k] = orig;
        compare(analytic_input.data()[k], (up - down) / (2.0 * FD_STEP));
    }
    report
}

/// Runs `count` random cases starting at `seed`, replacing cases that sit
/// on a relu kink with the next seed.
pub fn gradient_suite(count: usize, seed: u64) -> (Vec<GradReport>, usize) {
    let mut reports = Vec::with_capacity(count);
    let mut skipped = 0;
    let mut s = seed;
    while reports.len() < count {
        let r = check_case(&random_case(s));
        s += 1;
        if r.skipped_kink {
            skipped += 1;
        } else {
            reports.push(r);
        }
    }
    (reports, skipped)
}

/// Workspace root (two levels above this crate).
pub fn workspace_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

/// A config small enough to run every experiment kind in well under a second.
pub fn tiny_config(kind: discontinuity::experiment::ExperimentKind, out: &std::path::Path) -> discontinuity::experiment::ExperimentConfig {
    let text = format!(
        r#"
version = 1
kind = "{}"
seed = 3
width_multiplier = 0.1
output_dir = "{}"

[data.synthetic]
count = 120
dim = 16
classes = 3
test_count = 40

[train]
epochs = 2
batch_size = 16

[sweep]
eta_max = 1e-1
eta_min = 1e-4
points = 4
num_inputs = 8
num_noise_seeds = 2

[options]
dm_inputs = 30
denoise_inputs = 10
denoise_draws = 2
latent_dim = 4
probe_step = 10
bijection_precision = 16
bijection_check_precision = 4

[options.diffusion]
steps = 50
"#,
        kind.name(),
        out.display()
    );
    discontinuity::experiment::ExperimentConfig::from_toml(&text).unwrap()
}
