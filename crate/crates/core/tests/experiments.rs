//! Every experiment kind end to end on synthetic data.

mod common;

use std::collections::BTreeSet;

use discontinuity::experiment::{self, read_json, ArtifactFormat, ExperimentKind, Manifest};

fn run_in(kind: ExperimentKind, dir: &std::path::Path) -> Manifest {
    experiment::run(&common::tiny_config(kind, dir)).unwrap_or_else(|e| panic!("{kind}: {e}"))
}

#[test]
fn every_kind_writes_a_complete_manifest() {
    for kind in ExperimentKind::ALL {
        let tmp = tempfile::tempdir().unwrap();
        let m = run_in(kind, tmp.path());
        assert_eq!(m.kind, kind);
        let listed: BTreeSet<_> = m.artifacts.iter().map(|a| a.path.clone()).collect();
        assert_eq!(listed.len(), m.artifacts.len(), "{kind}: duplicate artifact");
        for path in m.paths() {
            let meta = std::fs::metadata(&path).unwrap_or_else(|_| panic!("{kind}: missing {}", path.display()));
            assert!(meta.len() > 0, "{kind}: empty {}", path.display());
        }
        // nothing written that the manifest does not list
        let on_disk: BTreeSet<_> = std::fs::read_dir(tmp.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into())
            .filter(|p: &std::path::PathBuf| p != std::path::Path::new(Manifest::FILE))
            .collect();
        assert_eq!(on_disk, listed, "{kind}");
        assert!(m.artifacts.iter().any(|a| a.format == ArtifactFormat::Csv), "{kind}: no table");
        let summary = read_json(&m.summary_path()).unwrap();
        assert!(summary["checks"].is_object(), "{kind}: summary lacks checks");
        assert_eq!(Manifest::load(tmp.path()).unwrap(), m);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    for kind in [ExperimentKind::FigS2TrainVsUntrained, ExperimentKind::Fig3GanVsDiffusion, ExperimentKind::FigS1Denoise] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = pool.install(|| run_in(kind, a.path()));
        let mb = pool.install(|| run_in(kind, b.path()));
        assert_eq!(ma.artifacts, mb.artifacts);
        for (pa, pb) in ma.paths().iter().zip(mb.paths()) {
            assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(&pb).unwrap(), "{kind}: {}", pa.display());
        }
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let kind = ExperimentKind::Fig2Compression;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let ma = one.install(|| run_in(kind, a.path()));
    let mb = four.install(|| run_in(kind, b.path()));
    for (pa, pb) in ma.paths().iter().zip(mb.paths()) {
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(&pb).unwrap(), "{}", pa.display());
    }
}

#[test]
fn missing_data_directory_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config(ExperimentKind::Table1Dm, tmp.path());
    cfg.data.synthetic = None;
    cfg.data.dir = Some(tmp.path().join("nowhere"));
    let err = experiment::run(&cfg).unwrap_err();
    assert_eq!(err.kind(), "io");
}
