//! Experiment configuration files (TOML, `version = 1`).
//!
//! ```toml
//! version = 1
//! kind = "fig2_compression"
//! seed = 0
//! width_multiplier = 0.25
//! output_dir = "out/fig2"
//!
//! [data]
//! dir = "data/fashion-mnist"   # or [data.synthetic] count/dim/classes/test_count
//! train_limit = 8000
//! test_limit = 2000
//!
//! [train]                      # defaults for every role
//! epochs = 10
//! batch_size = 64
//! learning_rate = 1e-3
//!
//! [train_overrides.gan]        # per-role patches: classifier, autoencoder, gan, diffusion
//! epochs = 30
//!
//! [sweep]
//! eta_max = 1e-1
//! eta_min = 1e-5
//! points = 13
//! num_inputs = 200
//! num_noise_seeds = 5
//!
//! [models]
//! classifier = "classifier"                    # a preset name ...
//! autoencoders = ["funnel16", "funnel8", "overcomplete"]
//! # ... or an inline table with the ModelSpec fields
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::metrics::{log_grid, EtaSweepConfig};
use crate::model::ModelSpec;
use crate::optim::OptimizerKind;
use crate::ops::LossKind;
use crate::rng::derive_seed;
use crate::train::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "table1_dm")]
    Table1Dm,
    #[serde(rename = "fig2_compression")]
    Fig2Compression,
    #[serde(rename = "fig3_gan_vs_diffusion")]
    Fig3GanVsDiffusion,
    #[serde(rename = "figS1_denoise")]
    FigS1Denoise,
    #[serde(rename = "figS2_train_vs_untrained")]
    FigS2TrainVsUntrained,
    #[serde(rename = "dropout_control")]
    DropoutControl,
    #[serde(rename = "bijection_demo")]
    BijectionDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Table1Dm,
        ExperimentKind::Fig2Compression,
        ExperimentKind::Fig3GanVsDiffusion,
        ExperimentKind::FigS1Denoise,
        ExperimentKind::FigS2TrainVsUntrained,
        ExperimentKind::DropoutControl,
        ExperimentKind::BijectionDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Table1Dm => "table1_dm",
            ExperimentKind::Fig2Compression => "fig2_compression",
            ExperimentKind::Fig3GanVsDiffusion => "fig3_gan_vs_diffusion",
            ExperimentKind::FigS1Denoise => "figS1_denoise",
            ExperimentKind::FigS2TrainVsUntrained => "figS2_train_vs_untrained",
            ExperimentKind::DropoutControl => "dropout_control",
            ExperimentKind::BijectionDemo => "bijection_demo",
        }
    }

    pub fn needs_data(self) -> bool {
        self != ExperimentKind::BijectionDemo
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub count: usize,
    pub dim: usize,
    pub classes: usize,
    /// Rows generated for the held-out split.
    pub test_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
    pub dir: Option<PathBuf>,
    pub synthetic: Option<SyntheticData>,
    /// Seeded random subset of the training split.
    pub train_limit: Option<usize>,
    /// Seeded random subset of the test split.
    pub test_limit: Option<usize>,
}

/// Partial [`TrainConfig`] applied on top of `[train]` for one role.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPatch {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub seed: Option<u64>,
    pub loss_kind: Option<LossKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub eta_max: f64,
    pub eta_min: f64,
    pub points: usize,
    pub num_inputs: usize,
    pub num_noise_seeds: usize,
    pub noise_seed: u64,
    pub clip: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            eta_max: 1e-1,
            eta_min: 1e-5,
            points: 13,
            num_inputs: 200,
            num_noise_seeds: 5,
            noise_seed: 0,
            clip: false,
        }
    }
}

/// A preset name or a full inline spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Named(String),
    Inline(ModelSpec),
}

impl ModelChoice {
    fn named(name: &str) -> Self {
        ModelChoice::Named(name.to_string())
    }

    pub fn label(&self) -> String {
        match self {
            ModelChoice::Named(n) => n.clone(),
            ModelChoice::Inline(s) => format!("mlp_{}", s.widths().iter().map(|w| w.to_string()).collect::<Vec<_>>().join("_")),
        }
    }

    /// Named presets get an init seed derived from the global seed and
    /// `role`; inline specs keep their own.
    pub fn resolve(&self, input_dim: usize, output_dim: usize, multiplier: f64, seed: u64, role: u64) -> Result<ModelSpec> {
        let spec = match self {
            ModelChoice::Named(name) => {
                ModelSpec::by_name(name, input_dim, output_dim, multiplier)?
                    .with_seed(derive_seed(seed, &[0x1417, role]))
            }
            ModelChoice::Inline(spec) => spec.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    pub classifier: ModelChoice,
    pub autoencoders: Vec<ModelChoice>,
    pub denoising_autoencoder: ModelChoice,
    pub generator: ModelChoice,
    pub discriminator: ModelChoice,
    pub denoiser: ModelChoice,
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection {
            classifier: ModelChoice::named("classifier"),
            autoencoders: ["funnel16", "funnel8", "overcomplete"].map(ModelChoice::named).to_vec(),
            denoising_autoencoder: ModelChoice::named("overcomplete"),
            generator: ModelChoice::named("generator"),
            discriminator: ModelChoice::named("discriminator"),
            denoiser: ModelChoice::named("denoiser"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YScale {
    Linear,
    #[default]
    Log,
}

/// Which classifier output the metrics see.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierOutput {
    /// Pre-softmax scores.
    #[default]
    Logits,
    /// Class probabilities.
    Softmax,
}

/// Split(s) whose deduplicated inputs `d_m` is computed over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DmSplit {
    Train,
    Test,
    /// Train followed by test, then a seeded subset.
    #[default]
    Combined,
}

/// Knobs specific to one or two experiment kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// Deduplicated inputs used for `d_m`.
    pub dm_inputs: usize,
    pub dm_split: DmSplit,
    /// Output that `d_m` and sweeps measure for classifiers.
    pub classifier_output: ClassifierOutput,
    /// Also sweep the classifier in `fig2_compression`.
    pub include_classifier: bool,
    /// Corruption std when training the `fig2_compression` autoencoders.
    pub autoencoder_noise_std: f64,
    /// Corruption std for the denoising autoencoder and its evaluation.
    pub denoise_noise_std: f64,
    pub denoise_inputs: usize,
    /// Noise draws per held-out input in the denoising check.
    pub denoise_draws: usize,
    /// Dropout rate of the classifier in `dropout_control`.
    pub dropout_rate: f64,
    pub latent_dim: usize,
    /// Generator output width; defaults to the data width.
    pub generator_output: Option<usize>,
    pub diffusion: DiffusionConfig,
    /// Diffusion step at which the denoiser is probed.
    pub probe_step: usize,
    pub bijection_precision: u32,
    pub bijection_check_precision: u32,
    pub y_scale: YScale,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            dm_inputs: 2000,
            dm_split: DmSplit::Combined,
            classifier_output: ClassifierOutput::Logits,
            include_classifier: true,
            autoencoder_noise_std: 0.0,
            denoise_noise_std: 0.2,
            denoise_inputs: 500,
            denoise_draws: 5,
            dropout_rate: 0.5,
            latent_dim: crate::model::DEFAULT_LATENT_DIM,
            generator_output: None,
            diffusion: DiffusionConfig::default(),
            probe_step: 100,
            bijection_precision: crate::bijection::DEFAULT_PRECISION,
            bijection_check_precision: 8,
            y_scale: YScale::Log,
        }
    }
}

fn default_multiplier() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_multiplier")]
    pub width_multiplier: f64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub train_overrides: BTreeMap<String, TrainPatch>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub models: ModelsSection,
    #[serde(default)]
    pub options: Options,
}

pub const TRAIN_ROLES: [&str; 4] = ["classifier", "autoencoder", "gan", "diffusion"];

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            kind,
            seed: 0,
            width_multiplier: 1.0,
            output_dir: output_dir.into(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            train_overrides: BTreeMap::new(),
            sweep: SweepSection::default(),
            models: ModelsSection::default(),
            options: Options::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "width_multiplier {} must be positive",
                self.width_multiplier
            )));
        }
        if self.kind.needs_data() && self.data.dir.is_some() == self.data.synthetic.is_some() {
            return Err(Error::Config(
                "exactly one of data.dir and data.synthetic must be set".into(),
            ));
        }
        if let Some(role) = self.train_overrides.keys().find(|k| !TRAIN_ROLES.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "unknown train override {role:?}; expected one of {TRAIN_ROLES:?}"
            )));
        }
        for role in TRAIN_ROLES {
            self.train_config(role)?.validate()?;
        }
        self.sweep_config()?.validate()?;
        self.options.diffusion.validate()?;
        if self.options.probe_step >= self.options.diffusion.steps {
            return Err(Error::Config(format!(
                "probe_step {} beyond {} diffusion steps",
                self.options.probe_step, self.options.diffusion.steps
            )));
        }
        if !(0.0..1.0).contains(&self.options.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        let b = self.options.bijection_precision;
        if !(4..=crate::bijection::MAX_PRECISION).contains(&b) {
            return Err(Error::Config(format!("bijection_precision {b} outside 4..=52")));
        }
        if !(1..=12).contains(&self.options.bijection_check_precision) {
            return Err(Error::Config("bijection_check_precision must be in 1..=12".into()));
        }
        Ok(())
    }

    /// `[train]` with the role's patch applied and its seed mixed with the
    /// global seed.
    pub fn train_config(&self, role: &str) -> Result<TrainConfig> {
        let role_index = TRAIN_ROLES
            .iter()
            .position(|r| *r == role)
            .ok_or_else(|| Error::Config(format!("unknown training role {role:?}")))?;
        let mut cfg = self.train.clone();
        if let Some(p) = self.train_overrides.get(role) {
            if let Some(v) = p.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = p.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = p.learning_rate {
                cfg.learning_rate = v;
            }
            if let Some(v) = p.optimizer {
                cfg.optimizer = v;
            }
            if let Some(v) = p.seed {
                cfg.seed = v;
            }
            if p.loss_kind.is_some() {
                cfg.loss_kind = p.loss_kind;
            }
        }
        cfg.seed = derive_seed(self.seed, &[0x7A11, role_index as u64, cfg.seed]);
        Ok(cfg)
    }

    pub fn sweep_config(&self) -> Result<EtaSweepConfig> {
        let s = &self.sweep;
        Ok(EtaSweepConfig {
            eta_grid: log_grid(s.eta_max, s.eta_min, s.points)?,
            num_inputs: s.num_inputs,
            num_noise_seeds: s.num_noise_seeds,
            noise_seed: derive_seed(self.seed, &[0x5EE9, s.noise_seed]),
            clip: s.clip,
            dropout_active: false,
            keep_samples: false,
        })
    }
}
