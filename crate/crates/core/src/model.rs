//! Fully connected models and the named architectures used by the experiments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, Activation, LossKind, Target};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Hidden widths of the 16x funnel autoencoder at full scale.
pub const FUNNEL16_WIDTHS: [usize; 11] = [2000, 1000, 500, 250, 166, 125, 166, 250, 500, 1000, 2000];
/// Hidden widths of the 8x funnel autoencoder at full scale.
pub const FUNNEL8_WIDTHS: [usize; 7] = [2000, 1000, 500, 250, 500, 1000, 2000];
/// Hidden widths of the reference classifier.
pub const CLASSIFIER_WIDTHS: [usize; 2] = [512, 256];
/// Full-scale hidden width of the overcomplete autoencoder and diffusion denoiser.
pub const OVERCOMPLETE_WIDTH: usize = 2000;
pub const GENERATOR_WIDTHS: [usize; 2] = [256, 512];
pub const DISCRIMINATOR_WIDTHS: [usize; 2] = [512, 256];
pub const DEFAULT_LATENT_DIM: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// One rate per hidden layer, applied after its activation.
    pub dropout_rates: Vec<f64>,
    pub init_seed: u64,
}

/// Scales a full-size width, never below one unit.
pub fn scale_width(width: usize, multiplier: f64) -> usize {
    ((width as f64 * multiplier).round() as usize).max(1)
}

impl ModelSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Self {
        let dropout_rates = vec![0.0; hidden_widths.len()];
        ModelSpec {
            input_dim,
            hidden_widths,
            output_dim,
            hidden_activation,
            output_activation,
            dropout_rates,
            init_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rates = vec![rate; self.hidden_widths.len()];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config("all layer widths must be at least 1".into()));
        }
        if self.dropout_rates.len() != self.hidden_widths.len() {
            return Err(Error::Config(format!(
                "{} dropout rates for {} hidden layers",
                self.dropout_rates.len(),
                self.hidden_widths.len()
            )));
        }
        if let Some(r) = self.dropout_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("dropout rate {r} outside [0, 1)")));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_widths.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden_widths);
        w.push(self.output_dim);
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn has_dropout(&self) -> bool {
        self.dropout_rates.iter().any(|&r| r > 0.0)
    }

    /// Reference classifier: `input -> 512 -> 256 -> classes`, relu, softmax output.
    pub fn classifier(input_dim: usize, classes: usize) -> Self {
        ModelSpec::new(
            input_dim,
            CLASSIFIER_WIDTHS.to_vec(),
            classes,
            Activation::Relu,
            Activation::Softmax,
        )
    }

    pub fn funnel16(input_dim: usize, multiplier: f64) -> Self {
        Self::autoencoder(input_dim, FUNNEL16_WIDTHS.iter().map(|&w| scale_width(w, multiplier)).collect())
    }

    pub fn funnel8(input_dim: usize, multiplier: f64) -> Self {
        Self::autoencoder(input_dim, FUNNEL8_WIDTHS.iter().map(|&w| scale_width(w, multiplier)).collect())
    }

    /// Two hidden layers, each at least as wide as the input.
    pub fn overcomplete(input_dim: usize, multiplier: f64) -> Self {
        let w = scale_width(OVERCOMPLETE_WIDTH, multiplier).max(input_dim);
        Self::autoencoder(input_dim, vec![w, w])
    }

    pub fn autoencoder(input_dim: usize, hidden_widths: Vec<usize>) -> Self {
        ModelSpec::new(
            input_dim,
            hidden_widths,
            input_dim,
            Activation::Relu,
            Activation::Identity,
        )
    }

    /// Generator: latent -> 256 -> 512 -> output, tanh output in `[-1, 1]`.
    pub fn generator(latent_dim: usize, output_dim: usize) -> Self {
        ModelSpec::new(
            latent_dim,
            GENERATOR_WIDTHS.to_vec(),
            output_dim,
            Activation::Relu,
            Activation::Tanh,
        )
    }

    /// Discriminator: input -> 512 -> 256 -> 1, sigmoid output.
    pub fn discriminator(input_dim: usize) -> Self {
        ModelSpec::new(
            input_dim,
            DISCRIMINATOR_WIDTHS.to_vec(),
            1,
            Activation::Relu,
            Activation::Sigmoid,
        )
    }

    /// Noise predictor taking `data_dim` pixels plus one timestep element.
    pub fn denoiser(data_dim: usize, multiplier: f64) -> Self {
        let w = scale_width(OVERCOMPLETE_WIDTH, multiplier).max(data_dim);
        ModelSpec::new(
            data_dim + 1,
            vec![w, w],
            data_dim,
            Activation::Relu,
            Activation::Identity,
        )
    }

    /// Resolves an architecture by name. `output_dim` is the class count for
    /// `classifier`, the image size for `generator`, and ignored otherwise.
    pub fn by_name(name: &str, input_dim: usize, output_dim: usize, multiplier: f64) -> Result<Self> {
        Ok(match name {
            "classifier" => Self::classifier(input_dim, output_dim),
            "funnel16" => Self::funnel16(input_dim, multiplier),
            "funnel8" => Self::funnel8(input_dim, multiplier),
            "overcomplete" => Self::overcomplete(input_dim, multiplier),
            "generator" => Self::generator(input_dim, output_dim),
            "discriminator" => Self::discriminator(input_dim),
            "denoiser" => Self::denoiser(input_dim, multiplier),
            other => return Err(Error::Config(format!("unknown model name {other:?}"))),
        })
    }
}

/// One dense layer; `weight` is `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Whether dropout masks are applied during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Inactive,
    /// Masks derived from this seed (and the layer index).
    Active { seed: u64 },
}

impl DropoutMode {
    fn layer(self, layer: usize) -> (bool, u64) {
        match self {
            DropoutMode::Inactive => (false, 0),
            DropoutMode::Active { seed } => (true, rng::derive_seed(seed, &[layer as u64])),
        }
    }
}

/// Tape handles produced by [`Model::record`].
#[derive(Clone, Debug)]
pub struct Recorded {
    /// `(weight, bias)` per layer.
    pub params: Vec<(Var, Var)>,
    /// Output before the final activation.
    pub logits: Var,
    pub output: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
}

impl Model {
    /// Seeded initialization: weights uniform in `±sqrt(6 / fan_in)`, zero biases.
    pub fn build(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(spec.init_seed, &[]);
        let layers = spec
            .widths()
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                Ok(Layer {
                    weight: Tensor::matrix(fan_in, fan_out, w)?,
                    bias: Tensor::zeros(&[fan_out])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Model { spec, layers })
    }

    /// Assembles a model from explicit parameters, checking the shape chain.
    pub fn from_layers(spec: ModelSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        if layers.len() != widths.len() - 1 {
            return Err(Error::Consistency(format!(
                "{} layers for {} widths",
                layers.len(),
                widths.len()
            )));
        }
        for (i, (layer, pair)) in layers.iter().zip(widths.windows(2)).enumerate() {
            if layer.weight.shape() != [pair[0], pair[1]] || layer.bias.shape() != [pair[1]] {
                return Err(Error::Consistency(format!(
                    "layer {i}: weight {:?} / bias {:?} do not chain {} -> {}",
                    layer.weight.shape(),
                    layer.bias.shape(),
                    pair[0],
                    pair[1]
                )));
            }
            layer.weight.ensure_finite("weight")?;
            layer.bias.ensure_finite("bias")?;
        }
        Ok(Model { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// The same parameters with the output activation removed, exposing
    /// pre-activation outputs (logits for a softmax classifier).
    pub fn without_output_activation(&self) -> Model {
        let mut spec = self.spec.clone();
        spec.output_activation = Activation::Identity;
        Model {
            spec,
            layers: self.layers.clone(),
        }
    }

    /// The same model with the last layer's weights set to zero, so it starts
    /// out predicting its output bias. Diffusion denoisers need this: with the
    /// default init their initial predictions are large and training settles
    /// on the all-zero prediction.
    pub fn with_zero_output_weights(mut self) -> Model {
        if let Some(last) = self.layers.last_mut() {
            last.weight = last.weight.map(|_| 0.0);
        }
        self
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "model expects rows of width {}, got shape {:?}",
                self.spec.input_dim,
                x.shape()
            )));
        }
        Ok(())
    }

    /// `O(x, θ)` for a batch of rows.
    pub fn forward(&self, x: &Tensor, dropout: DropoutMode) -> Result<Tensor> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = ops::add_row(&ops::matmul(&h, &layer.weight)?, &layer.bias)?;
            if i == last {
                h = ops::activation(&z, self.spec.output_activation)?;
            } else {
                h = ops::activation(&z, self.spec.hidden_activation)?;
                let (active, seed) = dropout.layer(i);
                h = ops::dropout(&h, self.spec.dropout_rates[i], seed, active)?;
            }
        }
        Ok(h)
    }

    /// Forward pass on a single input vector.
    pub fn forward_one(&self, x: &[f64], dropout: DropoutMode) -> Result<Vec<f64>> {
        Ok(self.forward(&Tensor::row_vector(x)?, dropout)?.into_vec())
    }

    /// Pre-activation values of every hidden layer (dropout inactive).
    pub fn hidden_pre_activations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.clone();
        for layer in &self.layers[..self.layers.len() - 1] {
            let z = ops::add_row(&ops::matmul(&h, &layer.weight)?, &layer.bias)?;
            h = ops::activation(&z, self.spec.hidden_activation)?;
            out.push(z);
        }
        Ok(out)
    }

    /// Records the forward pass on `tape`, with parameters as leaves.
    pub fn record(
        &self,
        tape: &mut Tape,
        input: Var,
        dropout: DropoutMode,
        params_grad: bool,
    ) -> Result<Recorded> {
        self.check_input(tape.value(input))?;
        let last = self.layers.len() - 1;
        let mut params = Vec::with_capacity(self.layers.len());
        let mut h = input;
        let mut logits = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.leaf(layer.weight.clone(), params_grad);
            let b = tape.leaf(layer.bias.clone(), params_grad);
            params.push((w, b));
            let z = tape.matmul(h, w)?;
            let z = tape.add_row(z, b)?;
            if i == last {
                logits = z;
                h = tape.activation(z, self.spec.output_activation)?;
            } else {
                h = tape.activation(z, self.spec.hidden_activation)?;
                let (active, seed) = dropout.layer(i);
                h = tape.dropout(h, self.spec.dropout_rates[i], seed, active)?;
            }
        }
        Ok(Recorded {
            params,
            logits,
            output: h,
        })
    }

    /// Records the forward pass followed by a loss. Cross-entropy after a
    /// softmax head and BCE after a sigmoid head are computed from the logits.
    pub fn record_loss(
        &self,
        tape: &mut Tape,
        input: Var,
        target: Target,
        kind: LossKind,
        dropout: DropoutMode,
        params_grad: bool,
    ) -> Result<(Var, Recorded)> {
        let rec = self.record(tape, input, dropout, params_grad)?;
        let out_act = self.spec.output_activation;
        let loss = match (kind, target) {
            (LossKind::CrossEntropy, target) if out_act == Activation::Softmax => {
                tape.loss(rec.logits, target, kind)?
            }
            (LossKind::Bce, Target::Dense(t)) if out_act == Activation::Sigmoid => {
                tape.bce_logits(rec.logits, t)?
            }
            (kind, target) => tape.loss(rec.output, target, kind)?,
        };
        Ok((loss, rec))
    }

    /// Scalar loss of the model on `x` (same head selection as [`Model::record_loss`]).
    pub fn loss(
        &self,
        x: &Tensor,
        target: &Target,
        kind: LossKind,
        dropout: DropoutMode,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone(), false);
        let (l, _) = self.record_loss(&mut tape, input, target.clone(), kind, dropout, false)?;
        tape.value(l).item()
    }

    /// All parameters in layer order: weight (row-major) then bias.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.parameter_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(layer.bias.data());
        }
        out
    }

    /// Rebuilds a model from [`Model::flat_parameters`] output.
    pub fn from_flat(spec: ModelSpec, params: &[f64]) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.parameter_count() {
            return Err(Error::Consistency(format!(
                "spec needs {} parameters, got {}",
                spec.parameter_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        let mut layers = Vec::new();
        for pair in spec.widths().windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = params[offset..offset + fan_in * fan_out].to_vec();
            offset += fan_in * fan_out;
            let b = params[offset..offset + fan_out].to_vec();
            offset += fan_out;
            layers.push(Layer {
                weight: Tensor::matrix(fan_in, fan_out, w)?,
                bias: Tensor::new(vec![fan_out], b)?,
            });
        }
        Model::from_layers(spec, layers)
    }

    pub fn bitwise_eq(&self, other: &Model) -> bool {
        self.spec == other.spec
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.bitwise_eq(&b.weight) && a.bias.bitwise_eq(&b.bias))
    }
}

/// `∇_x L(O(x, θ), target)`; parameters are read, never modified.
pub fn input_gradient(
    model: &Model,
    x: &Tensor,
    target: &Target,
    kind: LossKind,
    dropout: DropoutMode,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone(), true);
    let (loss, _) = model.record_loss(&mut tape, input, target.clone(), kind, dropout, false)?;
    let grads = tape.backward(loss)?;
    Ok(grads.get_or_zeros(input, x))
}
