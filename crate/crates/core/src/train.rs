//! Training loops for the four model families.
//!
//! All loops are sequential and fully seeded: minibatch order, dropout
//! masks, corruption noise, latents and diffusion steps are drawn from
//! streams keyed by `(cfg.seed, epoch, step, ...)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::{DiffusionConfig, Schedule};
use crate::error::{Error, Result};
use crate::model::{DropoutMode, Model, ModelSpec};
use crate::ops::{LossKind, Target};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Overrides the family's default loss when set.
    pub loss_kind: Option<LossKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            seed: 0,
            loss_kind: None,
        }
    }
}

impl TrainConfig {
    /// `epochs == 0` is accepted and leaves models untouched.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean minibatch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Running training accuracy per epoch (classifiers only).
    pub epoch_accuracy: Vec<f64>,
    pub step_loss: Vec<f64>,
}

impl TrainHistory {
    fn push_epoch(&mut self, losses: &[f64]) {
        let mean = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        self.epoch_loss.push(mean);
        self.step_loss.extend_from_slice(losses);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanHistory {
    pub discriminator_loss: Vec<f64>,
    pub generator_loss: Vec<f64>,
    /// Fraction of the discriminator's real+fake batch it classified correctly.
    pub discriminator_accuracy: Vec<f64>,
}

pub struct GanOutcome {
    pub generator: Model,
    pub discriminator: Model,
    pub history: GanHistory,
}

/// Stacks the rows at `idx` into a batch.
fn gather(x: &Tensor, idx: &[usize]) -> Tensor {
    let n = x.cols();
    let mut data = Vec::with_capacity(idx.len() * n);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::matrix(idx.len(), n, data).expect("non-empty batch")
}

fn gaussian(rng: &mut impl Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[0xB47C, epoch as u64]));
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn dropout_for(model: &Model, seed: u64, epoch: usize, step: usize, tag: u64) -> DropoutMode {
    if model.spec().has_dropout() {
        DropoutMode::Active {
            seed: rng::derive_seed(seed, &[0xD809, tag, epoch as u64, step as u64]),
        }
    } else {
        DropoutMode::Inactive
    }
}

/// One forward/backward pass; returns the loss, parameter gradients and the
/// recorded head (logits for cross-entropy, output otherwise).
pub(crate) fn loss_and_grads(
    model: &Model,
    input: Tensor,
    target: Target,
    kind: LossKind,
    dropout: DropoutMode,
) -> Result<(f64, Vec<(Tensor, Tensor)>, Tensor)> {
    let mut tape = Tape::new();
    let x = tape.leaf(input, false);
    let (loss, rec) = model.record_loss(&mut tape, x, target, kind, dropout, true)?;
    let grads = tape.backward(loss)?;
    let pairs = rec
        .params
        .iter()
        .map(|&(w, b)| {
            (
                grads.get_or_zeros(w, tape.value(w)),
                grads.get_or_zeros(b, tape.value(b)),
            )
        })
        .collect();
    Ok((tape.value(loss).item()?, pairs, tape.value(rec.output).clone()))
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Evaluation-mode forward over a whole dataset in chunks.
pub fn predict(model: &Model, inputs: &Tensor) -> Result<Tensor> {
    let n = inputs.rows();
    let mut out = Vec::with_capacity(n * model.output_dim());
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let y = model.forward(&gather(inputs, chunk), DropoutMode::Inactive)?;
        out.extend_from_slice(y.data());
    }
    Tensor::matrix(n, model.output_dim(), out)
}

/// Fraction of rows whose argmax output equals the label.
pub fn accuracy(model: &Model, dataset: &Dataset) -> Result<f64> {
    let y = predict(model, dataset.inputs())?;
    let correct = (0..dataset.len())
        .filter(|&i| argmax(y.row(i)) == dataset.labels()[i])
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

pub fn train_classifier(model: &Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if model.output_dim() != dataset.class_count() || model.input_dim() != dataset.input_dim() {
        return Err(Error::Contract(format!(
            "classifier {}->{} does not fit dataset {}->{} classes",
            model.input_dim(),
            model.output_dim(),
            dataset.input_dim(),
            dataset.class_count()
        )));
    }
    let kind = cfg.loss_kind.unwrap_or(LossKind::CrossEntropy);
    let mut model = model.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let mut losses = Vec::new();
        let mut correct = 0usize;
        for (step, idx) in epoch_batches(dataset.len(), cfg.batch_size, cfg.seed, epoch)
            .iter()
            .enumerate()
        {
            let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels()[i]).collect();
            let target = match kind {
                LossKind::CrossEntropy => Target::Classes(labels.clone()),
                _ => Target::Dense(one_hot(&labels, dataset.class_count())?),
            };
            let dropout = dropout_for(&model, cfg.seed, epoch, step, 0);
            let (loss, grads, out) =
                loss_and_grads(&model, gather(dataset.inputs(), idx), target, kind, dropout)?;
            correct += (0..idx.len()).filter(|&r| argmax(out.row(r)) == labels[r]).count();
            opt.step(&mut model, &grads)?;
            losses.push(loss);
        }
        history.push_epoch(&losses);
        history.epoch_accuracy.push(correct as f64 / dataset.len() as f64);
        log::debug!("classifier epoch {epoch}: loss {:.5}", history.epoch_loss[epoch]);
    }
    Ok((model, history))
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        data[r * classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data)
}

/// Trains `model(x + ε) ≈ x` with Gaussian corruption of std `noise_std`
/// (0 gives a plain autoencoder). Corrupted inputs are not clipped.
pub fn train_autoencoder(
    model: &Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
    noise_std: f64,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    let n = dataset.input_dim();
    if model.input_dim() != n || model.output_dim() != n {
        return Err(Error::Contract(format!(
            "autoencoder {}->{} does not fit input width {n}",
            model.input_dim(),
            model.output_dim()
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Parameter(format!("noise std {noise_std} must be >= 0")));
    }
    let kind = cfg.loss_kind.unwrap_or(LossKind::Mse);
    let mut model = model.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let mut losses = Vec::new();
        for (step, idx) in epoch_batches(dataset.len(), cfg.batch_size, cfg.seed, epoch)
            .iter()
            .enumerate()
        {
            let clean = gather(dataset.inputs(), idx);
            let input = if noise_std > 0.0 {
                let mut r = rng::stream(cfg.seed, &[0xA0E, epoch as u64, step as u64]);
                let noise = gaussian(&mut r, clean.len(), noise_std);
                clean.zip_map(&Tensor::new(clean.shape().to_vec(), noise)?, |a, b| a + b)?
            } else {
                clean.clone()
            };
            let dropout = dropout_for(&model, cfg.seed, epoch, step, 1);
            let (loss, grads, _) = loss_and_grads(&model, input, Target::Dense(clean), kind, dropout)?;
            opt.step(&mut model, &grads)?;
            losses.push(loss);
        }
        history.push_epoch(&losses);
        log::debug!("autoencoder epoch {epoch}: loss {:.6}", history.epoch_loss[epoch]);
    }
    Ok((model, history))
}

/// Maps generator output from `[-1, 1]` to the data range `[0, 1]`.
pub fn generator_to_data(y: f64) -> f64 {
    0.5 * (y + 1.0)
}

/// Alternating GAN training: one discriminator step (bce on a stacked
/// real+fake batch) then one generator step with the non-saturating loss
/// `bce(D(G(z)), 1)`. Latents are standard normal.
pub fn train_gan(
    gen_spec: &ModelSpec,
    disc_spec: &ModelSpec,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<GanOutcome> {
    cfg.validate()?;
    let n = dataset.input_dim();
    if gen_spec.output_dim != n || disc_spec.input_dim != n || disc_spec.output_dim != 1 {
        return Err(Error::Contract(format!(
            "generator output {} / discriminator {}->{} must match data width {n} -> 1",
            gen_spec.output_dim, disc_spec.input_dim, disc_spec.output_dim
        )));
    }
    let mut generator = Model::build(gen_spec.clone())?;
    let mut discriminator = Model::build(disc_spec.clone())?;
    let mut g_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let mut d_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let latent = gen_spec.input_dim;
    let mut history = GanHistory::default();

    for epoch in 0..cfg.epochs {
        for (step, idx) in epoch_batches(dataset.len(), cfg.batch_size, cfg.seed, epoch)
            .iter()
            .enumerate()
        {
            let b = idx.len();
            let mut zr = rng::stream(cfg.seed, &[0x6A17, epoch as u64, step as u64]);

            // discriminator step
            let z = Tensor::matrix(b, latent, gaussian(&mut zr, b * latent, 1.0))?;
            let g_drop = dropout_for(&generator, cfg.seed, epoch, step, 2);
            let fake = generator.forward(&z, g_drop)?.map(generator_to_data);
            let mut rows = gather(dataset.inputs(), idx).into_vec();
            rows.extend_from_slice(fake.data());
            let d_in = Tensor::matrix(2 * b, n, rows)?;
            let labels: Vec<f64> = (0..2 * b).map(|i| if i < b { 1.0 } else { 0.0 }).collect();
            let d_target = Target::Dense(Tensor::matrix(2 * b, 1, labels)?);
            let d_drop = dropout_for(&discriminator, cfg.seed, epoch, step, 3);
            let (d_loss, d_grads, d_out) =
                loss_and_grads(&discriminator, d_in, d_target, LossKind::Bce, d_drop)?;
            let correct = d_out
                .data()
                .iter()
                .enumerate()
                .filter(|&(i, &p)| (p > 0.5) == (i < b))
                .count();
            d_opt.step(&mut discriminator, &d_grads)?;

            // generator step, discriminator frozen
            let z = Tensor::matrix(b, latent, gaussian(&mut zr, b * latent, 1.0))?;
            let mut tape = Tape::new();
            let zv = tape.leaf(z, false);
            let g_rec = generator.record(&mut tape, zv, g_drop, true)?;
            let scaled = tape.affine(g_rec.output, 0.5, 0.5)?;
            let d_drop = dropout_for(&discriminator, cfg.seed, epoch, step, 4);
            let ones = Target::Dense(Tensor::full(&[b, 1], 1.0)?);
            let (g_loss, _) =
                discriminator.record_loss(&mut tape, scaled, ones, LossKind::Bce, d_drop, false)?;
            let grads = tape.backward(g_loss)?;
            let g_grads: Vec<(Tensor, Tensor)> = g_rec
                .params
                .iter()
                .map(|&(w, bias)| {
                    (
                        grads.get_or_zeros(w, tape.value(w)),
                        grads.get_or_zeros(bias, tape.value(bias)),
                    )
                })
                .collect();
            g_opt.step(&mut generator, &g_grads)?;

            history.discriminator_loss.push(d_loss);
            history.generator_loss.push(tape.value(g_loss).item()?);
            history.discriminator_accuracy.push(correct as f64 / (2 * b) as f64);
        }
        log::debug!(
            "gan epoch {epoch}: d_loss {:.4} g_loss {:.4}",
            history.discriminator_loss.last().copied().unwrap_or(f64::NAN),
            history.generator_loss.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(GanOutcome {
        generator,
        discriminator,
        history,
    })
}

/// Trains a noise predictor on `[x_t, t/T] -> ε` with `t` uniform over the schedule.
pub fn train_diffusion(
    model: &Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
    dcfg: &DiffusionConfig,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    let schedule = Schedule::new(dcfg)?;
    let n = dataset.input_dim();
    if model.input_dim() != n + 1 || model.output_dim() != n {
        return Err(Error::Contract(format!(
            "denoiser {}->{} must map {} -> {n} (data plus one timestep element)",
            model.input_dim(),
            model.output_dim(),
            n + 1
        )));
    }
    let kind = cfg.loss_kind.unwrap_or(LossKind::Mse);
    let mut model = model.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let mut losses = Vec::new();
        for (step, idx) in epoch_batches(dataset.len(), cfg.batch_size, cfg.seed, epoch)
            .iter()
            .enumerate()
        {
            let mut r = rng::stream(cfg.seed, &[0xD1FF, epoch as u64, step as u64]);
            let mut inputs = Vec::with_capacity(idx.len() * (n + 1));
            let mut noise = Vec::with_capacity(idx.len() * n);
            for &i in idx {
                let t = r.gen_range(0..schedule.steps());
                let eps = gaussian(&mut r, n, 1.0);
                inputs.extend(schedule.denoiser_input(dataset.row(i), &eps, t));
                noise.extend(eps);
            }
            let input = Tensor::matrix(idx.len(), n + 1, inputs)?;
            let target = Target::Dense(Tensor::matrix(idx.len(), n, noise)?);
            let dropout = dropout_for(&model, cfg.seed, epoch, step, 5);
            let (loss, grads, _) = loss_and_grads(&model, input, target, kind, dropout)?;
            opt.step(&mut model, &grads)?;
            losses.push(loss);
        }
        history.push_epoch(&losses);
        log::debug!("diffusion epoch {epoch}: loss {:.5}", history.epoch_loss[epoch]);
    }
    Ok((model, history))
}

/// Mean noise-prediction mse of a denoiser at a fixed step `t`, with noise
/// drawn from `seed`.
pub fn diffusion_loss_at(
    model: &Model,
    dataset: &Dataset,
    dcfg: &DiffusionConfig,
    t: usize,
    seed: u64,
) -> Result<f64> {
    let schedule = Schedule::new(dcfg)?;
    if t >= schedule.steps() {
        return Err(Error::Parameter(format!("step {t} beyond schedule")));
    }
    let n = dataset.input_dim();
    let mut r = rng::stream(seed, &[0xE7A1]);
    let mut inputs = Vec::with_capacity(dataset.len() * (n + 1));
    let mut noise = Vec::with_capacity(dataset.len() * n);
    for i in 0..dataset.len() {
        let eps = gaussian(&mut r, n, 1.0);
        inputs.extend(schedule.denoiser_input(dataset.row(i), &eps, t));
        noise.extend(eps);
    }
    let pred = predict(model, &Tensor::matrix(dataset.len(), n + 1, inputs)?)?;
    let se: f64 = pred.data().iter().zip(&noise).map(|(p, e)| (p - e) * (p - e)).sum();
    Ok(se / noise.len() as f64)
}

/// Mean noise-prediction mse with `t` drawn uniformly per row.
pub fn diffusion_loss(model: &Model, dataset: &Dataset, dcfg: &DiffusionConfig, seed: u64) -> Result<f64> {
    let schedule = Schedule::new(dcfg)?;
    let n = dataset.input_dim();
    let mut r = rng::stream(seed, &[0xE7A2]);
    let mut inputs = Vec::with_capacity(dataset.len() * (n + 1));
    let mut noise = Vec::with_capacity(dataset.len() * n);
    for i in 0..dataset.len() {
        let t = r.gen_range(0..schedule.steps());
        let eps = gaussian(&mut r, n, 1.0);
        inputs.extend(schedule.denoiser_input(dataset.row(i), &eps, t));
        noise.extend(eps);
    }
    let pred = predict(model, &Tensor::matrix(dataset.len(), n + 1, inputs)?)?;
    let se: f64 = pred.data().iter().zip(&noise).map(|(p, e)| (p - e) * (p - e)).sum();
    Ok(se / noise.len() as f64)
}

/// Standard-normal noise of the given length from a seeded stream.
pub fn seeded_gaussian(seed: u64, parts: &[u64], len: usize, std: f64) -> Vec<f64> {
    gaussian(&mut rng::stream(seed, parts), len, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize;
    use crate::ops::Activation;

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: 3e-3,
            seed: 1,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let d = synthesize(1, 40, 6, 3).unwrap();
        let m = Model::build(ModelSpec::new(6, vec![8], 3, Activation::Relu, Activation::Softmax)).unwrap();
        let (trained, hist) = train_classifier(&m, &d, &small_cfg(0)).unwrap();
        assert!(trained.bitwise_eq(&m));
        assert!(hist.epoch_loss.is_empty());
    }

    #[test]
    fn classifier_dimension_mismatch() {
        let d = synthesize(1, 10, 6, 3).unwrap();
        let m = Model::build(ModelSpec::classifier(6, 4)).unwrap();
        assert!(matches!(
            train_classifier(&m, &d, &small_cfg(1)).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn classifier_loss_decreases() {
        let d = synthesize(3, 200, 8, 3).unwrap();
        let m = Model::build(ModelSpec::new(8, vec![16], 3, Activation::Relu, Activation::Softmax).with_seed(2)).unwrap();
        let (_, h) = train_classifier(&m, &d, &small_cfg(20)).unwrap();
        assert!(h.epoch_loss.last().unwrap() < &h.epoch_loss[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let d = synthesize(3, 64, 8, 3).unwrap();
        let m = Model::build(
            ModelSpec::new(8, vec![16], 3, Activation::Relu, Activation::Softmax)
                .with_dropout(0.2)
                .with_seed(2),
        )
        .unwrap();
        let (a, _) = train_classifier(&m, &d, &small_cfg(3)).unwrap();
        let (b, _) = train_classifier(&m, &d, &small_cfg(3)).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn constant_autoencoder_fits() {
        let rows = vec![vec![0.2, 0.7, 0.4]; 64];
        let d = Dataset::new("const", Tensor::from_rows(&rows).unwrap(), vec![0; 64], 1).unwrap();
        let m = Model::build(ModelSpec::autoencoder(3, vec![8]).with_seed(5)).unwrap();
        let (_, h) = train_autoencoder(&m, &d, &small_cfg(150), 0.0).unwrap();
        assert!(*h.epoch_loss.last().unwrap() < 1e-6, "{:?}", h.epoch_loss.last());
    }

    #[test]
    fn autoencoder_and_diffusion_preconditions() {
        let d = synthesize(1, 10, 4, 2).unwrap();
        let wrong = Model::build(ModelSpec::autoencoder(5, vec![3])).unwrap();
        assert!(matches!(
            train_autoencoder(&wrong, &d, &small_cfg(1), 0.0).unwrap_err(),
            Error::Contract(_)
        ));
        // no extra timestep slot
        let no_slot = Model::build(ModelSpec::autoencoder(4, vec![3])).unwrap();
        assert!(matches!(
            train_diffusion(&no_slot, &d, &small_cfg(1), &DiffusionConfig::default()).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn gan_zero_steps_returns_initializations() {
        let d = synthesize(1, 16, 6, 2).unwrap();
        let g = ModelSpec::generator(3, 6).with_seed(1);
        let disc = ModelSpec::discriminator(6).with_seed(2);
        let out = train_gan(&g, &disc, &d, &small_cfg(0)).unwrap();
        assert!(out.generator.bitwise_eq(&Model::build(g).unwrap()));
        assert!(out.discriminator.bitwise_eq(&Model::build(disc).unwrap()));
        assert!(out.history.generator_loss.is_empty());
    }

    #[test]
    fn gan_steps_record_history() {
        let d = synthesize(1, 64, 6, 2).unwrap();
        let g = ModelSpec::new(3, vec![8], 6, Activation::Relu, Activation::Tanh).with_seed(1);
        let disc = ModelSpec::new(6, vec![8], 1, Activation::Relu, Activation::Sigmoid).with_seed(2);
        let out = train_gan(&g, &disc, &d, &small_cfg(2)).unwrap();
        assert_eq!(out.history.generator_loss.len(), 4);
        assert!(out.history.discriminator_accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}
