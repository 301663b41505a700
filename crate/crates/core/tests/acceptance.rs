//! Acceptance suite: prints one PASS/FAIL line per criterion.
//!
//! The data-backed criteria need FashionMNIST in `data/fashion-mnist` (see
//! `scripts/fetch_datasets.py`) and share four experiment runs, so the whole
//! suite takes a while on a small machine. The process exits 0 after
//! reporting unless `--strict` is passed, in which case any FAIL exits 1.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde_json::Value;

use discontinuity::bijection::{boundary_expansion, exhaustive_bijectivity};
use discontinuity::data::{deduplicate, load_idx, synthesize};
use discontinuity::experiment::{self, ExperimentConfig, ExperimentKind};
use discontinuity::metrics::{eta_sweep, min_pairwise_output_distance, EtaSweepConfig, LossBinding, Probe, Sample, SampleTarget};
use discontinuity::ops::Activation;
use discontinuity::{DropoutMode, Model, ModelSpec};

const ETA_POINTS: usize = 13;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Verdict::new(false, detail)
    }
}

/// A finished experiment run: its summary and where its artifacts live.
struct Run {
    dir: PathBuf,
    summary: Value,
    elapsed: Duration,
}

impl Run {
    fn curve(&self, path: &[&str]) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut v = &self.summary;
        for key in path {
            v = v.get(*key)?;
        }
        let nums = |k: &str| -> Option<Vec<f64>> { v.get(k)?.as_array()?.iter().map(Value::as_f64).collect() };
        Some((nums("eta")?, nums("mean_r")?))
    }
}

struct Runs {
    root: PathBuf,
    scratch: tempfile::TempDir,
    done: BTreeMap<&'static str, Result<Run, String>>,
}

impl Runs {
    fn data_dir(&self) -> PathBuf {
        self.root.join("data/fashion-mnist")
    }

    fn data_ready(&self) -> Result<(), String> {
        let dir = self.data_dir();
        let files = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];
        match files.iter().find(|f| !dir.join(f).exists()) {
            None => Ok(()),
            Some(f) => Err(format!(
                "missing {}; fetch the data with `python3 scripts/fetch_datasets.py --out data`",
                dir.join(f).display()
            )),
        }
    }

    /// Runs `configs/<name>.toml` once (with `edit` applied) and caches the result.
    fn get(&mut self, name: &'static str, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<&Run, String> {
        if !self.done.contains_key(name) {
            let outcome = self.data_ready().and_then(|_| {
                let mut cfg = ExperimentConfig::load(self.root.join("configs").join(format!("{name}.toml")))
                    .map_err(|e| e.to_string())?;
                cfg.data.dir = Some(self.data_dir());
                cfg.output_dir = self.scratch.path().join(name);
                edit(&mut cfg);
                let start = Instant::now();
                let manifest = experiment::run(&cfg).map_err(|e| format!("{name}: {e}"))?;
                let elapsed = start.elapsed();
                let text = std::fs::read_to_string(manifest.summary_path()).map_err(|e| e.to_string())?;
                let summary = serde_json::from_str(&text).map_err(|e| e.to_string())?;
                Ok(Run { dir: cfg.output_dir.clone(), summary, elapsed })
            });
            self.done.insert(name, outcome);
        }
        self.done[name].as_ref().map_err(Clone::clone)
    }
}

fn minutes(d: Duration) -> String {
    format!("{:.1} min", d.as_secs_f64() / 60.0)
}

/// Spearman rank correlation without tie handling beyond average ranks.
fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|x| {
                let below = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
    let va: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mean).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn spread(r: &[f64]) -> f64 {
    let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = r.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

fn full_grid(eta: &[f64]) -> bool {
    eta.len() == ETA_POINTS
        && (eta[0] - 1e-1).abs() < 1e-15
        && (eta[ETA_POINTS - 1] - 1e-5).abs() < 1e-19
}

// --- criteria --------------------------------------------------------------

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let (reports, skipped) = common::gradient_suite(100, 1000);
    let elapsed = start.elapsed();
    let failures: usize = reports.iter().map(|r| r.failures).sum();
    let checked: usize = reports.iter().map(|r| r.checked).sum();
    let worst = reports.iter().map(|r| r.worst).fold(0.0, f64::max);
    Verdict::new(
        failures == 0 && elapsed < Duration::from_secs(120),
        format!(
            "100 models, {checked} gradients, {failures} over tolerance, worst rel {worst:.2e}, {skipped} kink draws replaced, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn naive_min_l1(rows: &[Vec<f64>]) -> (f64, (usize, usize)) {
    let mut best = (f64::INFINITY, (0, 1));
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let mut d = 0.0;
            for (a, b) in rows[i].iter().zip(&rows[j]) {
                d += (a - b).abs();
            }
            if d < best.0 {
                best = (d, (i, j));
            }
        }
    }
    best
}

fn injectivity(runs: &mut Runs) -> Verdict {
    let data_dir = runs.data_dir();
    let run = match runs.get("figS2_train_vs_untrained", |_| ()) {
        Ok(r) => r,
        Err(e) => return Verdict::fail(e),
    };
    let d_m = run.summary["d_m_trained"]["d_m"].as_f64().unwrap_or(f64::NAN);
    let inputs = run.summary["dm_inputs"].as_u64().unwrap_or(0);

    // naive double loop against the parallel scan on 64 deduplicated inputs
    let oracle = (|| -> Result<bool, String> {
        let model = discontinuity::checkpoint::load_checkpoint(run.dir.join("classifier.adpr"))
            .map_err(|e| e.to_string())?
            .without_output_activation();
        let test = load_idx(data_dir.join("t10k-images-idx3-ubyte"), data_dir.join("t10k-labels-idx1-ubyte"))
            .map_err(|e| e.to_string())?;
        let subset = deduplicate(&test).take(64).map_err(|e| e.to_string())?;
        let out = model.forward(subset.inputs(), DropoutMode::Inactive).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<f64>> = (0..out.rows()).map(|i| out.row(i).to_vec()).collect();
        let (naive, pair) = naive_min_l1(&rows);
        let fast = min_pairwise_output_distance(&model, &subset).map_err(|e| e.to_string())?;
        Ok(naive.to_bits() == fast.d_m.to_bits() && pair == fast.pair)
    })();
    match oracle {
        Ok(agree) => Verdict::new(
            d_m > 0.0 && inputs == 2000 && agree,
            format!(
                "trained d_m {d_m:.4e} over {inputs} inputs; naive oracle at N=64 {}; run {}",
                if agree { "bitwise equal" } else { "DIFFERS" },
                minutes(run.elapsed)
            ),
        ),
        Err(e) => Verdict::fail(format!("oracle: {e}")),
    }
}

fn training_effect(runs: &mut Runs) -> Verdict {
    let run = match runs.get("figS2_train_vs_untrained", |_| ()) {
        Ok(r) => r,
        Err(e) => return Verdict::fail(e),
    };
    let t = run.summary["d_m_trained"]["d_m"].as_f64().unwrap_or(f64::NAN);
    let u = run.summary["d_m_untrained"]["d_m"].as_f64().unwrap_or(f64::NAN);
    let ratio = t / u;
    Verdict::new(ratio >= 10.0, format!("d_m trained {t:.4e} / untrained {u:.4e} = {ratio:.2} (need >= 10)"))
}

fn classifier_trend(runs: &mut Runs) -> Verdict {
    let run = match runs.get("figS2_train_vs_untrained", |_| ()) {
        Ok(r) => r,
        Err(e) => return Verdict::fail(e),
    };
    let Some((eta, r)) = run.curve(&["sweep_trained"]) else {
        return Verdict::fail("summary has no trained sweep");
    };
    if !full_grid(&eta) {
        return Verdict::fail(format!("sweep grid has {} points", eta.len()));
    }
    let growth = r[ETA_POINTS - 1] / r[0];
    let neg_log: Vec<f64> = eta.iter().map(|e| -e.ln()).collect();
    let rho = rank_correlation(&neg_log, &r);
    Verdict::new(
        growth >= 2.0 && rho > 0.8,
        format!("r(1e-5)/r(1e-1) = {growth:.3} (need >= 2), spearman {rho:.3} (need > 0.8)"),
    )
}

fn compression_run(runs: &mut Runs) -> Result<&Run, String> {
    // the classifier trend is measured on the figS2 run
    runs.get("fig2_compression", |cfg| cfg.options.include_classifier = false)
}

fn autoencoder_flat(runs: &mut Runs) -> Verdict {
    let run = match compression_run(runs) {
        Ok(r) => r,
        Err(e) => return Verdict::fail(e),
    };
    match run.curve(&["models", "overcomplete"]) {
        Some((eta, r)) if full_grid(&eta) => {
            let v = spread(&r);
            Verdict::new(v <= 3.0, format!("overcomplete max/min mean r = {v:.3} (need <= 3)"))
        }
        _ => Verdict::fail("no overcomplete sweep on the full grid"),
    }
}

fn compression_order(runs: &mut Runs) -> Verdict {
    let run = match compression_run(runs) {
        Ok(r) => r,
        Err(e) => return Verdict::fail(e),
    };
    let last = |name: &str| run.curve(&["models", name]).and_then(|(_, r)| r.last().copied());
    let multiplier = run.summary["width_multiplier"].as_f64().unwrap_or(f64::NAN);
    match (last("funnel16"), last("funnel8"), last("overcomplete")) {
        (Some(f16), Some(f8), Some(oc)) => Verdict::new(
            f16 > f8 && f8 > oc && multiplier == 0.25 && run.elapsed < Duration::from_secs(30 * 60),
            format!(
                "r at 1e-5: funnel16 {f16:.3} > funnel8 {f8:.3} > overcomplete {oc:.3}; multiplier {multiplier}; run {}",
                minutes(run.elapsed)
            ),
        ),
        _ => Verdict::fail("missing autoencoder sweeps"),
    }
}

fn dropout_control(runs: &mut Runs) -> Verdict {
    let run = match runs.get("dropout_control", |_| ()) {
        Ok(r) => r,
        Err(e) => return Verdict::fail(e),
    };
    match run.curve(&["dropout_active"]) {
        Some((eta, r)) if full_grid(&eta) => {
            let growth = r[ETA_POINTS - 1] / r[0];
            Verdict::new(growth >= 10.0, format!("dropout active r(1e-5)/r(1e-1) = {growth:.3} (need >= 10)"))
        }
        _ => Verdict::fail("no dropout sweep on the full grid"),
    }
}

fn gan_vs_diffusion(runs: &mut Runs) -> Verdict {
    let run = match runs.get("fig3_gan_vs_diffusion", |_| ()) {
        Ok(r) => r,
        Err(e) => return Verdict::fail(e),
    };
    let (Some((eta, gen)), Some((_, den)), Some((_, untrained))) = (
        run.curve(&["generator_trained"]),
        run.curve(&["denoiser_trained"]),
        run.curve(&["generator_untrained"]),
    ) else {
        return Verdict::fail("missing sweeps in summary");
    };
    if !full_grid(&eta) {
        return Verdict::fail(format!("sweep grid has {} points", eta.len()));
    }
    let ratio = gen[ETA_POINTS - 1] / den[ETA_POINTS - 1];
    let flat = spread(&untrained);
    Verdict::new(
        ratio >= 5.0 && flat <= 3.0 && run.elapsed < Duration::from_secs(40 * 60),
        format!(
            "generator/denoiser r at 1e-5 = {ratio:.3} (need >= 5); untrained generator spread {flat:.3} (need <= 3); run {}",
            minutes(run.elapsed)
        ),
    )
}

fn denoising(runs: &mut Runs) -> Verdict {
    let run = match runs.get("figS1_denoise", |_| ()) {
        Ok(r) => r,
        Err(e) => return Verdict::fail(e),
    };
    let table = (|| -> Result<Vec<[f64; 3]>, String> {
        let mut reader = csv::Reader::from_path(run.dir.join("denoise.csv")).map_err(|e| e.to_string())?;
        reader
            .records()
            .map(|rec| {
                let rec = rec.map_err(|e| e.to_string())?;
                let f = |i: usize| rec[i].parse::<f64>().map_err(|e| e.to_string());
                Ok([f(1)?, f(2)?, f(3)?])
            })
            .collect()
    })();
    let rows = match table {
        Ok(rows) if !rows.is_empty() => rows,
        Ok(_) => return Verdict::fail("denoise.csv is empty"),
        Err(e) => return Verdict::fail(e),
    };
    let n = run.summary["data"]["input_dim"].as_f64().unwrap_or(f64::NAN);
    let fraction = rows.iter().filter(|r| r[0] < r[1]).count() as f64 / rows.len() as f64;
    let clean = rows.iter().map(|r| r[2]).sum::<f64>() / rows.len() as f64;
    Verdict::new(
        rows.len() == 500 && fraction >= 0.9 && clean > 0.01 * n,
        format!(
            "{} inputs, {:.1}% denoised (need >= 90%), mean ||AE(x)-x||_1 {clean:.2} (need > {:.2})",
            rows.len(),
            100.0 * fraction,
            0.01 * n
        ),
    )
}

fn linear_null() -> Verdict {
    let data = synthesize(17, 64, 20, 3).expect("synthetic data");
    let model = Model::build(ModelSpec::new(20, vec![16, 8], 5, Activation::Identity, Activation::Identity).with_seed(5))
        .expect("linear model");
    let samples: Vec<Sample> = (0..data.len())
        .map(|i| Sample { input: data.row(i).to_vec(), target: SampleTarget::Dense(vec![0.5; 5]) })
        .collect();
    let cfg = EtaSweepConfig { num_inputs: 64, num_noise_seeds: 5, ..Default::default() };
    match eta_sweep(&Probe::new(&model, LossBinding::Mse), &samples, &cfg) {
        Ok(result) => {
            let r: Vec<f64> = result.mean_curve().iter().map(|p| p.1).collect();
            let dev = r.iter().map(|v| ((v - r[0]) / r[0]).abs()).fold(0.0, f64::max);
            Verdict::new(
                r.len() == ETA_POINTS && dev < 1e-6,
                format!("{} eta points, max relative deviation {dev:.2e} (need < 1e-6)", r.len()),
            )
        }
        Err(e) => Verdict::fail(e.to_string()),
    }
}

fn bijection_witness() -> Verdict {
    let start = Instant::now();
    let bijective = exhaustive_bijectivity(8).unwrap_or(false);
    let ratios: Result<Vec<f64>, _> = (2..=30).map(|k| boundary_expansion(k, 32)).collect();
    let elapsed = start.elapsed();
    match ratios {
        Ok(r) => {
            // r[i] is k = i + 2
            let worst = (0..=26).map(|i| r[i + 2] / r[i]).fold(f64::INFINITY, f64::min);
            Verdict::new(
                bijective && worst >= 2.0 && elapsed < Duration::from_secs(60),
                format!(
                    "B=8 exhaustive {}; min ratio(k+2)/ratio(k) over k=2..28 at B=32 = {worst:.3}; {:.2} s",
                    if bijective { "bijective" } else { "NOT bijective" },
                    elapsed.as_secs_f64()
                ),
            )
        }
        Err(e) => Verdict::fail(e.to_string()),
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let path = entry.path();
        if path.is_file() {
            out.insert(entry.file_name().to_string_lossy().into_owned(), std::fs::read(&path).unwrap_or_default());
        }
    }
    out
}

fn determinism() -> Verdict {
    let scratch = tempfile::tempdir().expect("temp dir");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let mut differing = Vec::new();
    let mut files = 0;
    for kind in ExperimentKind::ALL {
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = scratch.path().join(format!("{}_{tag}", kind.name()));
                let cfg = common::tiny_config(kind, &out);
                pool.install(|| experiment::run(&cfg)).map(|_| dir_bytes(&out))
            })
            .collect();
        match (&runs[0], &runs[1]) {
            (Ok(a), Ok(b)) => {
                files += a.len();
                if a != b {
                    differing.push(kind.name());
                }
            }
            (Err(e), _) | (_, Err(e)) => return Verdict::fail(format!("{}: {e}", kind.name())),
        }
    }
    Verdict::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} kinds re-run on one thread, {files} files byte-identical", ExperimentKind::ALL.len())
        } else {
            format!("outputs differ for {}", differing.join(", "))
        },
    )
}

fn main() {
    let strict = std::env::args().any(|a| a == "--strict");
    let mut runs = Runs {
        root: common::workspace_root(),
        scratch: tempfile::tempdir().expect("temp dir"),
        done: BTreeMap::new(),
    };

    let criteria: Vec<(&str, Box<dyn Fn(&mut Runs) -> Verdict>)> = vec![
        ("gradient suite", Box::new(|_| gradient_suite())),
        ("injectivity witness", Box::new(injectivity)),
        ("training effect on d_m", Box::new(training_effect)),
        ("classifier discontinuity trend", Box::new(classifier_trend)),
        ("overcomplete autoencoder flatness", Box::new(autoencoder_flat)),
        ("compression ordering", Box::new(compression_order)),
        ("dropout control", Box::new(dropout_control)),
        ("GAN vs diffusion", Box::new(gan_vs_diffusion)),
        ("denoising, non-identity", Box::new(denoising)),
        ("linear-model null result", Box::new(|_| linear_null())),
        ("bijection witness", Box::new(|_| bijection_witness())),
        ("determinism", Box::new(|_| determinism())),
    ];

    let mut passed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check(&mut runs);
        passed += v.pass as usize;
        println!("{} {:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    println!("acceptance: {passed}/{} passed", criteria.len());
    if strict && passed < criteria.len() {
        std::process::exit(1);
    }
}
