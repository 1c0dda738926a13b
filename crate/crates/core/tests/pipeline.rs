use std::path::Path;

use evoad_core::data::write_csv;
use evoad_core::ensemble::load_ensemble;
use evoad_core::pipeline::{run_id, run_until};
use evoad_core::synth::{generate_synthetic, SynthSpec};
use evoad_core::{run_pipeline, Level, RunConfig};

fn tiny_config(dir: &Path) -> RunConfig {
    let d = generate_synthetic(&SynthSpec {
        features: 4,
        train_len: 2000,
        test_len: 1000,
        groups: 2,
        seed: 5,
        ..SynthSpec::default()
    })
    .unwrap();
    write_csv(&d.train, dir.join("train.csv")).unwrap();
    write_csv(&d.test, dir.join("test.csv")).unwrap();
    let text = r#"
        seed = 5
        [data]
        sigma = 4
        [subspaces]
        k = 2
        population_size = 4
        generations = 1
        [models]
        population_size = 4
        generations = 1
        epochs = 1
        n_diverse = 1
        [models.bounds]
        max_channels = 20
        max_window = 3
        [training]
        final_epochs = 1
        [finetune]
        population_size = 4
        generations = 2
        [baseline]
        channels = [8, 6, 4]
    "#;
    let mut cfg = RunConfig::from_toml(text).unwrap();
    cfg.data.train = dir.join("train.csv");
    cfg.data.test = dir.join("test.csv");
    cfg.out_dir = dir.join("runs");
    cfg
}

#[test]
fn full_run_writes_artifacts_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let first = run_pipeline(&cfg).unwrap();
    assert_eq!(first.levels.len(), Level::ALL.len());
    assert!(first.levels.iter().all(|l| !l.resumed));
    for name in [
        "config.toml",
        "partition.json",
        "subspaces.jsonl",
        "ensemble/ensemble.json",
        "run_manifest.json",
    ] {
        assert!(first.run_dir.join(name).exists(), "missing {name}");
    }
    for level in Level::ALL {
        assert!(first.run_dir.join(format!("{}.done", level.name())).exists());
    }
    let metrics = first.metrics.unwrap();
    assert!(first.baseline.is_some());

    let second = run_pipeline(&cfg).unwrap();
    assert!(second.levels.iter().all(|l| l.resumed));
    assert_eq!(second.metrics.unwrap(), metrics);
    assert_eq!(second.run_id, first.run_id);

    let e = load_ensemble(first.run_dir.join("ensemble/ensemble.json")).unwrap();
    assert_eq!(e.members.len(), 2);
}

#[test]
fn partial_runs_stop_at_the_requested_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let m = run_until(&cfg, Level::Subspaces, false).unwrap();
    assert_eq!(m.levels.len(), 2);
    assert!(m.run_dir.join("subspaces.done").exists());
    assert!(!m.run_dir.join("models.done").exists());
    assert!(m.metrics.is_none());

    let resumed = run_until(&cfg, Level::Models, false).unwrap();
    assert!(resumed.levels[0].resumed && resumed.levels[1].resumed && !resumed.levels[2].resumed);
}

#[test]
fn run_id_ignores_workers_and_output_but_not_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let id = run_id(&cfg).unwrap();
    let mut other = cfg.clone();
    other.workers = 3;
    other.out_dir = dir.path().join("elsewhere");
    assert_eq!(run_id(&other).unwrap(), id);
    other.seed += 1;
    assert_ne!(run_id(&other).unwrap(), id);
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.data.train = dir.path().join("absent.csv");
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(err.is_data_error(), "{err}");

    let mut bad = tiny_config(dir.path());
    bad.subspaces.k = 9;
    assert!(!run_pipeline(&bad).unwrap_err().is_data_error());
}

#[test]
fn rerun_gives_byte_identical_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = run_pipeline(&cfg).unwrap();
    let mut again = cfg.clone();
    again.out_dir = dir.path().join("again");
    again.workers = 2;
    let b = run_pipeline(&again).unwrap();
    for f in [
        "ensemble/ensemble.json",
        "ensemble/member_0.weights.bin",
        "ensemble/member_1.genome.json",
    ] {
        assert_eq!(
            std::fs::read(a.run_dir.join(f)).unwrap(),
            std::fs::read(b.run_dir.join(f)).unwrap(),
            "{f}"
        );
    }
}
