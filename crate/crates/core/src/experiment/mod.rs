//! Config-driven experiment runner.
//!
//! [`run`] trains whatever the experiment kind needs, measures it and writes
//! CSV tables, SVG plots, checkpoints and a `summary.json` into the output
//! directory, followed by a `manifest.json` listing every artifact. Paths in
//! the manifest and summary are relative to the output directory, and no
//! wall-clock data is recorded, so reruns of one config are byte-identical.

pub mod config;
pub mod plot;
pub mod tables;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bijection;
use crate::checkpoint::save_checkpoint;
use crate::data::{deduplicate, load_idx, synthesize, Dataset};
use crate::diffusion::Schedule;
use crate::error::{Error, Result};
use crate::metrics::{
    eta_sweep, min_pairwise_output_distance, trend_correlation, LossBinding, PairwiseMinimum,
    Probe, Sample, SampleTarget, SweepResult,
};
use crate::model::{DropoutMode, Model, ModelSpec};
use crate::rng::{derive_seed, stream};
use crate::tensor::l1_distance;
use crate::train::{
    accuracy, diffusion_loss_at, seeded_gaussian, train_autoencoder, train_classifier,
    train_diffusion, train_gan, TrainHistory,
};

pub use config::{ClassifierOutput, DmSplit, ExperimentConfig, ExperimentKind, ModelChoice, YScale};
pub use plot::{emit_plot_svg, PlotOptions, Series};
pub use tables::{emit_sweep_csv, read_sweep_csv};

/// Printed into every `d_m` summary.
pub const DM_DISCLAIMER: &str = "reference architecture chosen by this implementation; the original \
     classifier architecture is unknown, so d_m magnitudes are not comparable to published values";

const ROLE_CLASSIFIER: u64 = 0;
const ROLE_AUTOENCODER: u64 = 10;
const ROLE_GENERATOR: u64 = 20;
const ROLE_DISCRIMINATOR: u64 = 21;
const ROLE_DENOISER: u64 = 22;
const ROLE_DENOISING_AE: u64 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactFormat {
    Csv,
    Svg,
    Json,
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: PathBuf,
    pub format: ArtifactFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub artifacts: Vec<Artifact>,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn paths(&self) -> Vec<PathBuf> {
        self.artifacts.iter().map(|a| self.output_dir.join(&a.path)).collect()
    }

    pub fn summary_path(&self) -> PathBuf {
        self.output_dir.join("summary.json")
    }

    pub fn load(output_dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = output_dir.as_ref();
        let value = read_json(&dir.join(Self::FILE))?;
        let mut m: Manifest =
            serde_json::from_value(value).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        m.output_dir = dir.to_path_buf();
        Ok(m)
    }
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Collects artifacts while an experiment runs.
struct Sink {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Sink {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn record(&mut self, name: &str, format: ArtifactFormat) -> PathBuf {
        self.artifacts.push(Artifact {
            path: PathBuf::from(name),
            format,
        });
        self.dir.join(name)
    }

    fn sweep(&mut self, name: &str, result: &SweepResult) -> Result<()> {
        let path = self.record(&format!("sweep_{name}.csv"), ArtifactFormat::Csv);
        emit_sweep_csv(result, path)
    }

    fn rows(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.record(name, ArtifactFormat::Csv);
        tables::write_rows(&path, header, rows)
    }

    fn plot(&mut self, name: &str, series: &[Series], opts: &PlotOptions) -> Result<()> {
        let path = self.record(name, ArtifactFormat::Svg);
        emit_plot_svg(series, opts, path)
    }

    fn checkpoint(&mut self, name: &str, model: &Model) -> Result<()> {
        let path = self.record(&format!("{name}.adpr"), ArtifactFormat::Checkpoint);
        save_checkpoint(model, path)
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        let path = self.record(name, ArtifactFormat::Json);
        write_json(&path, value)
    }

    fn finish(mut self, kind: ExperimentKind, summary: Value) -> Result<Manifest> {
        self.json("summary.json", &summary)?;
        let manifest = Manifest {
            kind,
            artifacts: self.artifacts,
            output_dir: self.dir,
        };
        let value = serde_json::to_value(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        write_json(&manifest.output_dir.join(Manifest::FILE), &value)?;
        Ok(manifest)
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs one experiment end to end.
pub fn run(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let sink = Sink::new(&cfg.output_dir)?;
    log::info!("running {} into {}", cfg.kind, cfg.output_dir.display());
    match cfg.kind {
        ExperimentKind::Table1Dm => table1_dm(cfg, sink),
        ExperimentKind::Fig2Compression => fig2_compression(cfg, sink),
        ExperimentKind::Fig3GanVsDiffusion => fig3_gan_vs_diffusion(cfg, sink),
        ExperimentKind::FigS1Denoise => figs1_denoise(cfg, sink),
        ExperimentKind::FigS2TrainVsUntrained => figs2_train_vs_untrained(cfg, sink),
        ExperimentKind::DropoutControl => dropout_control(cfg, sink),
        ExperimentKind::BijectionDemo => bijection_demo(cfg, sink),
    }
}

// --- shared pieces -------------------------------------------------------

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Seeded subset of `count` rows, kept in index order.
fn subset(ds: Dataset, count: Option<usize>, seed: u64, tag: u64) -> Result<Dataset> {
    match count {
        Some(c) if c < ds.len() => {
            let mut idx = shuffled(ds.len(), seed, tag);
            idx.truncate(c);
            idx.sort_unstable();
            ds.select(&idx)
        }
        _ => Ok(ds),
    }
}

fn shuffled(len: usize, seed: u64, tag: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut stream(seed, &[0x5B5E, tag]));
    idx
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let (train, test) = match (&cfg.data.dir, &cfg.data.synthetic) {
        (Some(dir), None) => (
            load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?,
            load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?,
        ),
        (None, Some(s)) => {
            // one draw so that both splits share the labelling rule
            let all = synthesize(derive_seed(cfg.seed, &[0xDA7A]), s.count + s.test_count, s.dim, s.classes)?;
            let train: Vec<usize> = (0..s.count).collect();
            let test: Vec<usize> = (s.count..s.count + s.test_count).collect();
            (all.select(&train)?, all.select(&test)?)
        }
        _ => return Err(Error::Config("exactly one of data.dir and data.synthetic must be set".into())),
    };
    Ok(Splits {
        train: subset(train, cfg.data.train_limit, cfg.seed, 1)?,
        test: subset(test, cfg.data.test_limit, cfg.seed, 2)?,
    })
}

/// Test-split rows used as sweep inputs (a seeded sample, recorded in the summary).
fn sweep_indices(test: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    let n = cfg.sweep.num_inputs;
    if n > test.len() {
        return Err(Error::Config(format!(
            "sweep wants {n} inputs but the test split has {}",
            test.len()
        )));
    }
    let mut idx = shuffled(test.len(), cfg.seed, 3);
    idx.truncate(n);
    Ok(idx)
}

fn classifier_samples(ds: &Dataset, idx: &[usize]) -> Vec<Sample> {
    idx.iter()
        .map(|&i| Sample {
            input: ds.row(i).to_vec(),
            target: SampleTarget::Class(ds.labels()[i]),
        })
        .collect()
}

fn reconstruction_samples(ds: &Dataset, idx: &[usize]) -> Vec<Sample> {
    idx.iter()
        .map(|&i| Sample {
            input: ds.row(i).to_vec(),
            target: SampleTarget::Dense(ds.row(i).to_vec()),
        })
        .collect()
}

fn latent_samples(count: usize, latent_dim: usize, seed: u64) -> Vec<Sample> {
    (0..count)
        .map(|i| Sample {
            input: seeded_gaussian(seed, &[0x1A7E, i as u64], latent_dim, 1.0),
            target: SampleTarget::Implicit,
        })
        .collect()
}

fn sweep_summary(result: &SweepResult) -> Value {
    let first = result.per_eta.first().map(|s| s.mean_r).unwrap_or(f64::NAN);
    let last = result.per_eta.last().map(|s| s.mean_r).unwrap_or(f64::NAN);
    json!({
        "eta": result.etas(),
        "mean_r": result.per_eta.iter().map(|s| s.mean_r).collect::<Vec<_>>(),
        "std_r": result.per_eta.iter().map(|s| s.std_r).collect::<Vec<_>>(),
        "n_discarded": result.per_eta.iter().map(|s| s.n_discarded).collect::<Vec<_>>(),
        "growth": last / first,
        "variation": result.variation(),
        "spearman": trend_correlation(result),
    })
}

fn curve(name: &str, result: &SweepResult) -> Series {
    Series::new(name, result.mean_curve())
}

fn sweep_plot(cfg: &ExperimentConfig, title: &str) -> PlotOptions {
    PlotOptions {
        title: title.into(),
        y_scale: cfg.options.y_scale,
        ..Default::default()
    }
}

/// Ratio of mean r at the smallest eta to mean r at the largest.
pub fn growth(result: &SweepResult) -> f64 {
    let first = result.per_eta.first().map(|s| s.mean_r).unwrap_or(f64::NAN);
    let last = result.per_eta.last().map(|s| s.mean_r).unwrap_or(f64::NAN);
    last / first
}

fn smallest_eta_mean(result: &SweepResult) -> f64 {
    result.per_eta.last().map(|s| s.mean_r).unwrap_or(f64::NAN)
}

fn dm_json(dm: &PairwiseMinimum) -> Value {
    json!({ "d_m": dm.d_m, "pair": [dm.pair.0, dm.pair.1], "duplicate_inputs": dm.duplicate_inputs })
}

fn dm_rows(entries: &[(&str, &PairwiseMinimum)]) -> Vec<Vec<String>> {
    entries
        .iter()
        .map(|(name, dm)| {
            vec![
                name.to_string(),
                tables::format_float(dm.d_m),
                dm.pair.0.to_string(),
                dm.pair.1.to_string(),
            ]
        })
        .collect()
}

fn history_json(h: &TrainHistory) -> Value {
    json!({ "epoch_loss": h.epoch_loss, "epoch_accuracy": h.epoch_accuracy })
}

/// The classifier as the metrics see it (see [`ClassifierOutput`]).
pub fn measured_classifier(cfg: &ExperimentConfig, model: &Model) -> Model {
    match cfg.options.classifier_output {
        ClassifierOutput::Logits => model.without_output_activation(),
        ClassifierOutput::Softmax => model.clone(),
    }
}

struct TrainedClassifier {
    untrained: Model,
    trained: Model,
    history: TrainHistory,
}

impl TrainedClassifier {
    fn measured(&self, cfg: &ExperimentConfig) -> (Model, Model) {
        (measured_classifier(cfg, &self.untrained), measured_classifier(cfg, &self.trained))
    }
}

fn classifier(cfg: &ExperimentConfig, splits: &Splits, dropout: f64) -> Result<TrainedClassifier> {
    let train = &splits.train;
    let mut spec = cfg.models.classifier.resolve(
        train.input_dim(),
        train.class_count(),
        cfg.width_multiplier,
        cfg.seed,
        ROLE_CLASSIFIER,
    )?;
    if dropout > 0.0 {
        spec = spec.with_dropout(dropout);
    }
    let untrained = Model::build(spec)?;
    let (trained, history) = train_classifier(&untrained, train, &cfg.train_config("classifier")?)?;
    Ok(TrainedClassifier {
        untrained,
        trained,
        history,
    })
}

/// Deduplicated `d_m` inputs and the number of duplicate rows removed from
/// the pool. Subsets of the combined pool are drawn with the config seed and
/// kept in pool order.
fn dm_inputs(cfg: &ExperimentConfig, splits: &Splits) -> Result<(Dataset, usize)> {
    let pool = match cfg.options.dm_split {
        DmSplit::Train => splits.train.clone(),
        DmSplit::Test => splits.test.clone(),
        DmSplit::Combined => splits.train.concat(&splits.test)?,
    };
    let unique = deduplicate(&pool);
    let removed = pool.len() - unique.len();
    let take = cfg.options.dm_inputs.min(unique.len());
    let chosen = match cfg.options.dm_split {
        DmSplit::Combined => {
            let mut idx = shuffled(unique.len(), cfg.seed, 6);
            idx.truncate(take);
            idx.sort_unstable();
            unique.select(&idx)?
        }
        _ => unique.take(take)?,
    };
    Ok((chosen, removed))
}

fn base_summary(cfg: &ExperimentConfig) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("kind".into(), json!(cfg.kind.name()));
    m.insert("seed".into(), json!(cfg.seed));
    m.insert("width_multiplier".into(), json!(cfg.width_multiplier));
    m
}

fn data_summary(splits: &Splits) -> Value {
    json!({
        "name": splits.train.name(),
        "train_size": splits.train.len(),
        "test_size": splits.test.len(),
        "input_dim": splits.train.input_dim(),
    })
}

// --- recipes ---------------------------------------------------------------

fn table1_dm(cfg: &ExperimentConfig, mut sink: Sink) -> Result<Manifest> {
    let splits = load_splits(cfg)?;
    let c = classifier(cfg, &splits, 0.0)?;
    let (untrained, trained) = c.measured(cfg);
    let (inputs, removed) = dm_inputs(cfg, &splits)?;
    let dm_u = min_pairwise_output_distance(&untrained, &inputs)?;
    let dm_t = min_pairwise_output_distance(&trained, &inputs)?;
    sink.rows(
        "dm.csv",
        &["model", "d_m", "i", "j"],
        &dm_rows(&[("untrained", &dm_u), ("trained", &dm_t)]),
    )?;
    sink.checkpoint("classifier", &c.trained)?;

    let mut s = base_summary(cfg);
    s.insert("data".into(), data_summary(&splits));
    s.insert("dm_inputs".into(), json!(inputs.len()));
    s.insert("duplicates_removed".into(), json!(removed));
    s.insert("d_m_trained".into(), dm_json(&dm_t));
    s.insert("d_m_untrained".into(), dm_json(&dm_u));
    s.insert("d_m_ratio".into(), json!(dm_t.d_m / dm_u.d_m));
    s.insert("test_accuracy".into(), json!(accuracy(&c.trained, &splits.test)?));
    s.insert("training".into(), history_json(&c.history));
    s.insert("disclaimer".into(), json!(DM_DISCLAIMER));
    s.insert("checks".into(), json!({ "d_m_positive": dm_t.d_m > 0.0 }));
    sink.finish(cfg.kind, Value::Object(s))
}

fn figs2_train_vs_untrained(cfg: &ExperimentConfig, mut sink: Sink) -> Result<Manifest> {
    let splits = load_splits(cfg)?;
    let c = classifier(cfg, &splits, 0.0)?;
    let (untrained, trained) = c.measured(cfg);
    let (inputs, removed) = dm_inputs(cfg, &splits)?;
    let dm_u = min_pairwise_output_distance(&untrained, &inputs)?;
    let dm_t = min_pairwise_output_distance(&trained, &inputs)?;
    let idx = sweep_indices(&splits.test, cfg)?;
    let samples = classifier_samples(&splits.test, &idx);
    let scfg = cfg.sweep_config()?;
    let r_u = eta_sweep(&Probe::new(&untrained, LossBinding::CrossEntropy), &samples, &scfg)?;
    let r_t = eta_sweep(&Probe::new(&trained, LossBinding::CrossEntropy), &samples, &scfg)?;

    sink.rows(
        "dm.csv",
        &["model", "d_m", "i", "j"],
        &dm_rows(&[("untrained", &dm_u), ("trained", &dm_t)]),
    )?;
    sink.sweep("untrained", &r_u)?;
    sink.sweep("trained", &r_t)?;
    sink.plot(
        "figS2.svg",
        &[curve("untrained classifier", &r_u), curve("trained classifier", &r_t)],
        &sweep_plot(cfg, "classifier before and after training"),
    )?;
    sink.checkpoint("classifier", &c.trained)?;

    let ratio = dm_t.d_m / dm_u.d_m;
    let mut s = base_summary(cfg);
    s.insert("data".into(), data_summary(&splits));
    s.insert("dm_inputs".into(), json!(inputs.len()));
    s.insert("duplicates_removed".into(), json!(removed));
    s.insert("d_m_trained".into(), dm_json(&dm_t));
    s.insert("d_m_untrained".into(), dm_json(&dm_u));
    s.insert("d_m_ratio".into(), json!(ratio));
    s.insert("sweep_inputs".into(), json!(idx));
    s.insert("sweep_untrained".into(), sweep_summary(&r_u));
    s.insert("sweep_trained".into(), sweep_summary(&r_t));
    s.insert("training".into(), history_json(&c.history));
    s.insert("disclaimer".into(), json!(DM_DISCLAIMER));
    s.insert(
        "checks".into(),
        json!({
            "d_m_positive": dm_t.d_m > 0.0,
            "d_m_ratio_at_least_10": ratio >= 10.0,
            "trained_above_untrained_at_smallest_eta": smallest_eta_mean(&r_t) > smallest_eta_mean(&r_u),
        }),
    );
    sink.finish(cfg.kind, Value::Object(s))
}

fn fig2_compression(cfg: &ExperimentConfig, mut sink: Sink) -> Result<Manifest> {
    let splits = load_splits(cfg)?;
    let n = splits.train.input_dim();
    let idx = sweep_indices(&splits.test, cfg)?;
    let scfg = cfg.sweep_config()?;
    let mut series = Vec::new();
    let mut models = serde_json::Map::new();
    let mut at_smallest = std::collections::BTreeMap::new();
    let mut checks = serde_json::Map::new();

    if cfg.options.include_classifier {
        let c = classifier(cfg, &splits, 0.0)?;
        let (_, trained) = c.measured(cfg);
        let r = eta_sweep(
            &Probe::new(&trained, LossBinding::CrossEntropy),
            &classifier_samples(&splits.test, &idx),
            &scfg,
        )?;
        sink.sweep("classifier", &r)?;
        sink.checkpoint("classifier", &c.trained)?;
        series.push(curve("classifier", &r));
        checks.insert(
            "classifier_trend".into(),
            json!(growth(&r) >= 2.0 && trend_correlation(&r) > 0.8),
        );
        let mut m = sweep_summary(&r);
        m["training"] = history_json(&c.history);
        models.insert("classifier".into(), m);
    }

    let samples = reconstruction_samples(&splits.test, &idx);
    let tcfg = cfg.train_config("autoencoder")?;
    for (i, choice) in cfg.models.autoencoders.iter().enumerate() {
        let label = choice.label();
        let spec = choice.resolve(n, n, cfg.width_multiplier, cfg.seed, ROLE_AUTOENCODER + i as u64)?;
        let untrained = Model::build(spec)?;
        let (ae, history) = train_autoencoder(&untrained, &splits.train, &tcfg, cfg.options.autoencoder_noise_std)?;
        let r = eta_sweep(&Probe::new(&ae, LossBinding::Mse), &samples, &scfg)?;
        sink.sweep(&label, &r)?;
        sink.checkpoint(&label, &ae)?;
        series.push(curve(&label, &r));
        at_smallest.insert(label.clone(), smallest_eta_mean(&r));
        if label == "overcomplete" {
            checks.insert("overcomplete_flat".into(), json!(r.variation() <= 3.0));
        }
        let mut m = sweep_summary(&r);
        m["training"] = history_json(&history);
        m["widths"] = json!(ae.spec().widths());
        models.insert(label, m);
    }
    if let (Some(f16), Some(f8), Some(oc)) = (
        at_smallest.get("funnel16"),
        at_smallest.get("funnel8"),
        at_smallest.get("overcomplete"),
    ) {
        checks.insert("compression_order".into(), json!(f16 > f8 && f8 > oc));
    }
    sink.plot("fig2.svg", &series, &sweep_plot(cfg, "expansion ratio by architecture"))?;

    let mut s = base_summary(cfg);
    s.insert("data".into(), data_summary(&splits));
    s.insert("sweep_inputs".into(), json!(idx));
    s.insert("models".into(), Value::Object(models));
    s.insert("checks".into(), Value::Object(checks));
    sink.finish(cfg.kind, Value::Object(s))
}

fn fig3_gan_vs_diffusion(cfg: &ExperimentConfig, mut sink: Sink) -> Result<Manifest> {
    let splits = load_splits(cfg)?;
    let n = splits.train.input_dim();
    let out = cfg.options.generator_output.unwrap_or(n);
    if out != n {
        return Err(Error::Config(format!(
            "generator_output {out} must equal the data width {n} to train against the data"
        )));
    }
    let latent = cfg.options.latent_dim;
    let m = cfg.width_multiplier;
    let gen_spec = cfg.models.generator.resolve(latent, out, m, cfg.seed, ROLE_GENERATOR)?;
    let disc_spec = cfg.models.discriminator.resolve(n, 1, m, cfg.seed, ROLE_DISCRIMINATOR)?;
    let untrained_gen = Model::build(gen_spec.clone())?;
    let untrained_disc = Model::build(disc_spec.clone())?;
    let gan_cfg = cfg.train_config("gan")?;
    let gan = train_gan(&gen_spec, &disc_spec, &splits.train, &gan_cfg)?;

    let den_spec = cfg.models.denoiser.resolve(n, n, m, cfg.seed, ROLE_DENOISER)?;
    let dcfg = cfg.options.diffusion;
    let untrained_den = Model::build(den_spec)?.with_zero_output_weights();
    let (denoiser, den_history) = train_diffusion(
        &untrained_den,
        &splits.train,
        &cfg.train_config("diffusion")?,
        &dcfg,
    )?;

    let scfg = cfg.sweep_config()?;
    let latents = latent_samples(scfg.num_inputs, latent, derive_seed(cfg.seed, &[0x1A7E]));
    let r_gen_u = eta_sweep(
        &Probe::new(&untrained_gen, LossBinding::NonSaturating { discriminator: &untrained_disc }),
        &latents,
        &scfg,
    )?;
    let r_gen = eta_sweep(
        &Probe::new(&gan.generator, LossBinding::NonSaturating { discriminator: &gan.discriminator }),
        &latents,
        &scfg,
    )?;

    let schedule = Schedule::new(&dcfg)?;
    let t = cfg.options.probe_step;
    let idx = sweep_indices(&splits.test, cfg)?;
    let noise_seed = derive_seed(cfg.seed, &[0xD15E]);
    let den_samples: Vec<Sample> = idx
        .iter()
        .map(|&i| {
            let eps = seeded_gaussian(noise_seed, &[i as u64], n, 1.0);
            Sample {
                input: schedule.noise(splits.test.row(i), &eps, t),
                target: SampleTarget::Dense(eps),
            }
        })
        .collect();
    let den_probe = Probe::new(&denoiser, LossBinding::Mse).with_suffix(vec![schedule.encode_step(t)]);
    let r_den = eta_sweep(&den_probe, &den_samples, &scfg)?;

    sink.sweep("generator_untrained", &r_gen_u)?;
    sink.sweep("generator_trained", &r_gen)?;
    sink.sweep("denoiser_trained", &r_den)?;
    sink.plot(
        "fig3.svg",
        &[
            curve("generator (untrained)", &r_gen_u),
            curve("generator (trained)", &r_gen),
            curve("diffusion denoiser (trained)", &r_den),
        ],
        &sweep_plot(cfg, "GAN generator vs diffusion denoiser"),
    )?;
    sink.checkpoint("generator", &gan.generator)?;
    sink.checkpoint("discriminator", &gan.discriminator)?;
    sink.checkpoint("denoiser", &denoiser)?;

    let gan_ratio = smallest_eta_mean(&r_gen) / smallest_eta_mean(&r_den);
    let mut s = base_summary(cfg);
    s.insert("data".into(), data_summary(&splits));
    s.insert("latent_dim".into(), json!(latent));
    s.insert("probe_step".into(), json!(t));
    s.insert("sweep_inputs".into(), json!(idx));
    s.insert("generator_untrained".into(), sweep_summary(&r_gen_u));
    s.insert("generator_trained".into(), sweep_summary(&r_gen));
    s.insert("denoiser_trained".into(), sweep_summary(&r_den));
    s.insert("generator_over_denoiser".into(), json!(gan_ratio));
    s.insert(
        "gan_training".into(),
        json!({
            "discriminator_loss": gan.history.discriminator_loss,
            "generator_loss": gan.history.generator_loss,
            "discriminator_accuracy": gan.history.discriminator_accuracy,
        }),
    );
    s.insert("diffusion_training".into(), history_json(&den_history));
    s.insert(
        "denoiser_loss_at_probe_step".into(),
        json!({
            "untrained": diffusion_loss_at(&untrained_den, &splits.test, &dcfg, t, noise_seed)?,
            "trained": diffusion_loss_at(&denoiser, &splits.test, &dcfg, t, noise_seed)?,
        }),
    );
    s.insert(
        "checks".into(),
        json!({
            "generator_at_least_5x_denoiser": gan_ratio >= 5.0,
            "untrained_generator_flat": r_gen_u.variation() <= 3.0,
        }),
    );
    sink.finish(cfg.kind, Value::Object(s))
}

/// Per-input denoising errors of an autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRecord {
    pub index: usize,
    /// Mean over draws of `‖AE(x+ε) − x‖₁`.
    pub denoised_l1: f64,
    /// Mean over draws of `‖ε‖₁`.
    pub noise_l1: f64,
    /// `‖AE(x) − x‖₁`.
    pub clean_l1: f64,
}

pub fn denoise_records(
    ae: &Model,
    ds: &Dataset,
    idx: &[usize],
    noise_std: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<DenoiseRecord>> {
    let n = ds.input_dim();
    idx.iter()
        .map(|&i| {
            let x = ds.row(i);
            let clean = ae.forward_one(x, DropoutMode::Inactive)?;
            let (mut den, mut noise) = (0.0, 0.0);
            for k in 0..draws {
                let eps = seeded_gaussian(seed, &[i as u64, k as u64], n, noise_std);
                let noisy: Vec<f64> = x.iter().zip(&eps).map(|(a, b)| a + b).collect();
                den += l1_distance(&ae.forward_one(&noisy, DropoutMode::Inactive)?, x);
                noise += eps.iter().map(|e| e.abs()).sum::<f64>();
            }
            Ok(DenoiseRecord {
                index: i,
                denoised_l1: den / draws as f64,
                noise_l1: noise / draws as f64,
                clean_l1: l1_distance(&clean, x),
            })
        })
        .collect()
}

fn figs1_denoise(cfg: &ExperimentConfig, mut sink: Sink) -> Result<Manifest> {
    let splits = load_splits(cfg)?;
    let n = splits.train.input_dim();
    let spec = cfg
        .models
        .denoising_autoencoder
        .resolve(n, n, cfg.width_multiplier, cfg.seed, ROLE_DENOISING_AE)?;
    let std = cfg.options.denoise_noise_std;
    let (ae, history) = train_autoencoder(&Model::build(spec)?, &splits.train, &cfg.train_config("autoencoder")?, std)?;
    let count = cfg.options.denoise_inputs.min(splits.test.len());
    let mut idx = shuffled(splits.test.len(), cfg.seed, 4);
    idx.truncate(count);
    let records = denoise_records(
        &ae,
        &splits.test,
        &idx,
        std,
        cfg.options.denoise_draws.max(1),
        derive_seed(cfg.seed, &[0x5107]),
    )?;
    let improved = records.iter().filter(|r| r.denoised_l1 < r.noise_l1).count();
    let fraction = improved as f64 / records.len().max(1) as f64;
    let mean_clean = records.iter().map(|r| r.clean_l1).sum::<f64>() / records.len().max(1) as f64;
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                tables::format_float(r.denoised_l1),
                tables::format_float(r.noise_l1),
                tables::format_float(r.clean_l1),
            ]
        })
        .collect();
    sink.rows("denoise.csv", &["index", "denoised_l1", "noise_l1", "clean_l1"], &rows)?;
    sink.checkpoint("denoising_autoencoder", &ae)?;

    let mut s = base_summary(cfg);
    s.insert("data".into(), data_summary(&splits));
    s.insert("noise_std".into(), json!(std));
    s.insert("inputs".into(), json!(records.len()));
    s.insert("fraction_denoised".into(), json!(fraction));
    s.insert("mean_clean_l1".into(), json!(mean_clean));
    s.insert("identity_threshold".into(), json!(0.01 * n as f64));
    s.insert("training".into(), history_json(&history));
    s.insert(
        "checks".into(),
        json!({
            "denoises_at_least_90_percent": fraction >= 0.9,
            "not_identity": mean_clean > 0.01 * n as f64,
        }),
    );
    sink.finish(cfg.kind, Value::Object(s))
}

fn dropout_control(cfg: &ExperimentConfig, mut sink: Sink) -> Result<Manifest> {
    let splits = load_splits(cfg)?;
    let rate = cfg.options.dropout_rate;
    let c = classifier(cfg, &splits, rate)?;
    let idx = sweep_indices(&splits.test, cfg)?;
    let samples = classifier_samples(&splits.test, &idx);
    let (_, trained) = c.measured(cfg);
    let probe = Probe::new(&trained, LossBinding::CrossEntropy);
    let mut scfg = cfg.sweep_config()?;
    let r_eval = eta_sweep(&probe, &samples, &scfg)?;
    scfg.dropout_active = true;
    let r_drop = eta_sweep(&probe, &samples, &scfg)?;

    sink.sweep("dropout_active", &r_drop)?;
    sink.sweep("dropout_inactive", &r_eval)?;
    sink.plot(
        "dropout.svg",
        &[curve("dropout active", &r_drop), curve("dropout inactive", &r_eval)],
        &sweep_plot(cfg, "classifier measured with and without dropout"),
    )?;
    sink.checkpoint("classifier_dropout", &c.trained)?;

    let mut s = base_summary(cfg);
    s.insert("data".into(), data_summary(&splits));
    s.insert("dropout_rate".into(), json!(rate));
    s.insert("sweep_inputs".into(), json!(idx));
    s.insert("dropout_active".into(), sweep_summary(&r_drop));
    s.insert("dropout_inactive".into(), sweep_summary(&r_eval));
    s.insert("training".into(), history_json(&c.history));
    s.insert("checks".into(), json!({ "dropout_growth_at_least_10": growth(&r_drop) >= 10.0 }));
    sink.finish(cfg.kind, Value::Object(s))
}

fn bijection_demo(cfg: &ExperimentConfig, mut sink: Sink) -> Result<Manifest> {
    let b = cfg.options.bijection_precision;
    let check_b = cfg.options.bijection_check_precision;
    let bijective = bijection::exhaustive_bijectivity(check_b)?;
    let points = bijection::boundary_curve(b)?;
    let increasing = points.windows(2).all(|w| w[1].ratio > w[0].ratio);
    let doubling = points.windows(3).all(|w| w[2].ratio >= 2.0 * w[0].ratio);
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| vec![p.k.to_string(), tables::format_float(p.input_distance), tables::format_float(p.ratio)])
        .collect();
    sink.rows("bijection.csv", &["k", "input_distance", "ratio"], &rows)?;
    sink.plot(
        "bijection.svg",
        &[Series::new(
            format!("interleave, B={b}"),
            points.iter().map(|p| (p.input_distance, p.ratio)).collect(),
        )],
        &PlotOptions {
            title: "boundary expansion of bit interleaving".into(),
            x_label: "input distance".into(),
            y_label: "output / input distance".into(),
            y_scale: YScale::Log,
        },
    )?;

    let mut s = base_summary(cfg);
    s.insert("precision".into(), json!(b));
    s.insert("check_precision".into(), json!(check_b));
    s.insert("k".into(), json!(points.iter().map(|p| p.k).collect::<Vec<_>>()));
    s.insert("ratio".into(), json!(points.iter().map(|p| p.ratio).collect::<Vec<_>>()));
    s.insert(
        "checks".into(),
        json!({ "bijective": bijective, "strictly_increasing": increasing, "ratio_doubles_every_two_k": doubling }),
    );
    sink.finish(cfg.kind, Value::Object(s))
}

/// Preset spec used by the `train` subcommand.
pub fn resolve_for_training(cfg: &ExperimentConfig, splits: &Splits, role: &str) -> Result<ModelSpec> {
    let n = splits.train.input_dim();
    let m = cfg.width_multiplier;
    match role {
        "classifier" => cfg.models.classifier.resolve(n, splits.train.class_count(), m, cfg.seed, ROLE_CLASSIFIER),
        "autoencoder" => cfg.models.denoising_autoencoder.resolve(n, n, m, cfg.seed, ROLE_DENOISING_AE),
        "diffusion" => cfg.models.denoiser.resolve(n, n, m, cfg.seed, ROLE_DENOISER),
        other => Err(Error::Config(format!("cannot train role {other:?} standalone"))),
    }
}

/// How a standalone checkpoint is probed by the `sweep` subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeFamily {
    /// Cross-entropy against the test label.
    Classifier,
    /// Mean squared error against the clean input.
    Autoencoder,
}

/// `d_m` of `model` over the deduplicated test inputs selected by `cfg`.
pub fn dm_for_model(cfg: &ExperimentConfig, model: &Model) -> Result<(PairwiseMinimum, usize)> {
    let splits = load_splits(cfg)?;
    let (inputs, _) = dm_inputs(cfg, &splits)?;
    Ok((min_pairwise_output_distance(&measured_classifier(cfg, model), &inputs)?, inputs.len()))
}

/// Sweep of `model` over the test inputs selected by `cfg`; returns the
/// result and the test indices used.
pub fn sweep_for_model(
    cfg: &ExperimentConfig,
    model: &Model,
    family: ProbeFamily,
) -> Result<(SweepResult, Vec<usize>)> {
    let splits = load_splits(cfg)?;
    let idx = sweep_indices(&splits.test, cfg)?;
    let logits = measured_classifier(cfg, model);
    let (probe, samples) = match family {
        ProbeFamily::Classifier => (
            Probe::new(&logits, LossBinding::CrossEntropy),
            classifier_samples(&splits.test, &idx),
        ),
        ProbeFamily::Autoencoder => (
            Probe::new(model, LossBinding::Mse),
            reconstruction_samples(&splits.test, &idx),
        ),
    };
    Ok((eta_sweep(&probe, &samples, &cfg.sweep_config()?)?, idx))
}

/// Trains one role from `cfg` and writes its checkpoint(s) and history into
/// the output directory.
pub fn train_role(cfg: &ExperimentConfig, role: &str) -> Result<Manifest> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let mut sink = Sink::new(&cfg.output_dir)?;
    let tcfg = cfg.train_config(role)?;
    let mut s = base_summary(cfg);
    s.insert("role".into(), json!(role));
    s.insert("data".into(), data_summary(&splits));
    match role {
        "gan" => {
            let n = splits.train.input_dim();
            let m = cfg.width_multiplier;
            let g = cfg.models.generator.resolve(cfg.options.latent_dim, n, m, cfg.seed, ROLE_GENERATOR)?;
            let d = cfg.models.discriminator.resolve(n, 1, m, cfg.seed, ROLE_DISCRIMINATOR)?;
            let gan = train_gan(&g, &d, &splits.train, &tcfg)?;
            sink.checkpoint("generator", &gan.generator)?;
            sink.checkpoint("discriminator", &gan.discriminator)?;
            s.insert(
                "training".into(),
                json!({
                    "discriminator_loss": gan.history.discriminator_loss,
                    "generator_loss": gan.history.generator_loss,
                }),
            );
        }
        _ => {
            let mut model = Model::build(resolve_for_training(cfg, &splits, role)?)?;
            if role == "diffusion" {
                model = model.with_zero_output_weights();
            }
            let (trained, history) = match role {
                "classifier" => train_classifier(&model, &splits.train, &tcfg)?,
                "autoencoder" => train_autoencoder(&model, &splits.train, &tcfg, cfg.options.denoise_noise_std)?,
                _ => train_diffusion(&model, &splits.train, &tcfg, &cfg.options.diffusion)?,
            };
            sink.checkpoint(role, &trained)?;
            s.insert("training".into(), history_json(&history));
        }
    }
    sink.finish(cfg.kind, Value::Object(s))
}
