//! Command-line front end for the experiment runner.
//!
//! Every subcommand prints one JSON document on success. On failure it prints
//! a single JSON line `{"error":{"kind":..,"message":..}}` to stderr and exits
//! with status 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use discontinuity::checkpoint::load_checkpoint;
use discontinuity::experiment::{
    self, emit_plot_svg, emit_sweep_csv, read_sweep_csv, ExperimentConfig, ExperimentKind,
    PlotOptions, ProbeFamily, Series, YScale,
};
use discontinuity::{Error, Result};

#[derive(Parser)]
#[command(name = "discontinuity", version, about = "Measure approximate discontinuity of small neural networks")]
struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible scheduling, 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eta_min: Option<f64>,
    #[arg(long)]
    eta_max: Option<f64>,
    /// Number of sweep inputs.
    #[arg(long)]
    inputs: Option<usize>,
    /// Global seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width_mult: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Classifier,
    Autoencoder,
    Gan,
    Diffusion,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Classifier,
    Autoencoder,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by the config.
    Run {
        #[command(flatten)]
        o: Overrides,
    },
    /// Train one model role and save its checkpoint.
    Train {
        #[command(flatten)]
        o: Overrides,
        #[arg(long, value_enum)]
        role: Role,
    },
    /// Minimum pairwise output distance of a checkpoint over the config's d_m inputs.
    Dm {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Expansion-ratio sweep of a checkpoint over the config's test inputs.
    Sweep {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "classifier")]
        family: Family,
    },
    /// Bit-interleaving bijection demo (no data needed).
    Demo {
        #[command(flatten)]
        o: Overrides,
    },
    /// Plot one or more sweep CSVs into an SVG.
    Plot {
        /// Sweep CSV files; the series name is the file stem.
        #[arg(long = "csv", required = true)]
        csvs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        linear: bool,
        #[arg(long, default_value = "expansion ratio")]
        title: String,
    },
}

fn load_config(o: &Overrides, fallback: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let mut cfg = match (&o.config, fallback) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(kind)) => ExperimentConfig::new(kind, "out"),
        (None, None) => return Err(Error::Config("--config is required".into())),
    };
    if let Some(v) = o.eta_min {
        cfg.sweep.eta_min = v;
    }
    if let Some(v) = o.eta_max {
        cfg.sweep.eta_max = v;
    }
    if let Some(v) = o.inputs {
        cfg.sweep.num_inputs = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.width_mult {
        cfg.width_multiplier = v;
    }
    if let Some(v) = &o.out {
        cfg.output_dir = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manifest_json(m: &experiment::Manifest) -> Value {
    json!({
        "kind": m.kind.name(),
        "output_dir": m.output_dir,
        "artifacts": m.paths(),
    })
}

/// Mean r per eta, averaged over seeds, from a sweep CSV.
fn csv_curve(path: &PathBuf) -> Result<Series> {
    let rows = read_sweep_csv(path)?;
    let mut points: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        match points.last_mut() {
            Some(p) if p.0 == r.eta => {
                p.1 += r.mean_r;
                p.2 += 1;
            }
            _ => points.push((r.eta, r.mean_r, 1)),
        }
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Series::new(name, points.into_iter().map(|(e, s, c)| (e, s / c as f64)).collect()))
}

fn execute(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Run { o } => {
            let cfg = load_config(&o, None)?;
            Ok(manifest_json(&experiment::run(&cfg)?))
        }
        Command::Train { o, role } => {
            let cfg = load_config(&o, None)?;
            let role = match role {
                Role::Classifier => "classifier",
                Role::Autoencoder => "autoencoder",
                Role::Gan => "gan",
                Role::Diffusion => "diffusion",
            };
            Ok(manifest_json(&experiment::train_role(&cfg, role)?))
        }
        Command::Dm { o, checkpoint } => {
            let cfg = load_config(&o, None)?;
            let model = load_checkpoint(&checkpoint)?;
            let (dm, n) = experiment::dm_for_model(&cfg, &model)?;
            Ok(json!({ "d_m": dm.d_m, "pair": [dm.pair.0, dm.pair.1], "inputs": n, "duplicate_inputs": dm.duplicate_inputs }))
        }
        Command::Sweep { o, checkpoint, family } => {
            let cfg = load_config(&o, None)?;
            let model = load_checkpoint(&checkpoint)?;
            let family = match family {
                Family::Classifier => ProbeFamily::Classifier,
                Family::Autoencoder => ProbeFamily::Autoencoder,
            };
            let (result, idx) = experiment::sweep_for_model(&cfg, &model, family)?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io {
                path: cfg.output_dir.clone(),
                source: e,
            })?;
            let path = cfg.output_dir.join("sweep.csv");
            emit_sweep_csv(&result, &path)?;
            Ok(json!({
                "csv": path,
                "eta": result.etas(),
                "mean_r": result.per_eta.iter().map(|s| s.mean_r).collect::<Vec<_>>(),
                "sweep_inputs": idx,
            }))
        }
        Command::Demo { o } => {
            let mut cfg = load_config(&o, Some(ExperimentKind::BijectionDemo))?;
            cfg.kind = ExperimentKind::BijectionDemo;
            Ok(manifest_json(&experiment::run(&cfg)?))
        }
        Command::Plot { csvs, out, linear, title } => {
            let series = csvs.iter().map(csv_curve).collect::<Result<Vec<_>>>()?;
            let opts = PlotOptions {
                title,
                y_scale: if linear { YScale::Linear } else { YScale::Log },
                ..Default::default()
            };
            emit_plot_svg(&series, &opts, &out)?;
            Ok(json!({ "svg": out }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("{}", json!({ "error": { "kind": "config", "message": e.to_string() } }));
            return ExitCode::FAILURE;
        }
    }
    match execute(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
