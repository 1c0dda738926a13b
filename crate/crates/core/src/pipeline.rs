//! End-to-end driver: reduce, evolve subspaces, evolve and train models,
//! fine-tune, assemble the ensemble and evaluate it.
//!
//! Artifacts live in `out_dir/<run id>/`, where the run id hashes the
//! config (minus worker count and output directory) together with the
//! input files. A level whose `<level>.done` marker exists is loaded from
//! disk instead of recomputed.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BaselineConfig, RunConfig};
use crate::data::{
    load_csv, make_windows, reduce, split_train_val, write_csv, Matrix, MinMaxScaler, TimeSeriesDataset,
    WindowedDataset,
};
use crate::ensemble::{
    calibrate_threshold, evaluate_f1, load_ensemble, predict_series, save_ensemble, EnsembleModel, EvaluationReport,
    ThresholdedModel,
};
use crate::error::{Error, Result};
use crate::finetune::fine_tune;
use crate::genetic::GenerationRecord;
use crate::model_evolution::{evolve_subspace_models, SubspaceData};
use crate::nn::genome::{genome_from_json, genome_to_json};
use crate::nn::io::{load_weights, save_weights};
use crate::nn::{self, LayerKind, ModelGenome, TrainedModel};
use crate::pool::WorkerPool;
use crate::rng::{derive_seed, substream, tags};
use crate::subspace::{evolve_subspaces, partition_from_json, partition_to_json, Subspace, SubspacePartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Reduce,
    Subspaces,
    Models,
    FineTune,
    Ensemble,
}

impl Level {
    pub const ALL: [Level; 5] = [
        Level::Reduce,
        Level::Subspaces,
        Level::Models,
        Level::FineTune,
        Level::Ensemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Level::Reduce => "reduce",
            Level::Subspaces => "subspaces",
            Level::Models => "models",
            Level::FineTune => "finetune",
            Level::Ensemble => "ensemble",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTiming {
    pub level: String,
    pub wall_seconds: f64,
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub config: RunConfig,
    pub levels: Vec<LevelTiming>,
    /// Paths relative to `run_dir`.
    pub artifacts: Vec<String>,
    pub metrics: Option<EvaluationReport>,
    pub baseline: Option<EvaluationReport>,
}

/// Append-only JSON-lines writer.
pub struct JsonLines {
    file: File,
    path: PathBuf,
}

impl JsonLines {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self { file, path })
    }

    pub fn append(&mut self, record: &impl Serialize) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Content hash of the settings and inputs that determine results.
pub fn run_id(cfg: &RunConfig) -> Result<String> {
    let mut canonical = cfg.clone();
    canonical.workers = 1;
    canonical.out_dir = PathBuf::new();
    let (train, test) = (canonical.data.train.clone(), canonical.data.test.clone());
    canonical.data.train = PathBuf::new();
    canonical.data.test = PathBuf::new();
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&canonical)?);
    for path in [train, test] {
        if !path.as_os_str().is_empty() {
            hasher.update(fs::read(&path).map_err(|e| Error::io(&path, e))?);
        }
        hasher.update([0xff]);
    }
    Ok(hex::encode(&hasher.finalize()[..12]))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Chronological train/validation windows of `rows` projected onto `g`.
pub fn subspace_windows(
    rows: &Matrix,
    g: &Subspace,
    window_len: usize,
    stride: usize,
) -> Result<(WindowedDataset, WindowedDataset)> {
    let (train, val) = split_train_val(&make_windows(rows, None, window_len, stride)?)?;
    Ok((train.project(g)?, val.project(g)?))
}

fn save_model(model: &TrainedModel, dir: &Path, stem: &str) -> Result<()> {
    write_file(&dir.join(format!("{stem}.genome.json")), genome_to_json(&model.genome)?)?;
    save_weights(&model.weights, dir.join(format!("{stem}.weights.bin")))
}

fn load_model(dir: &Path, stem: &str, subspace: Subspace) -> Result<TrainedModel> {
    let genome = genome_from_json(&read_file(&dir.join(format!("{stem}.genome.json")))?)?;
    let weights = load_weights(dir.join(format!("{stem}.weights.bin")))?;
    TrainedModel::new(genome, weights, subspace)
}

/// Trains a fresh model of `genome` on the training part of `rows`. The
/// result is rounded to `f32` so that persisted and in-memory models agree.
pub fn train_final(
    genome: &ModelGenome,
    subspace: &Subspace,
    rows: &Matrix,
    epochs: usize,
    batch_size: usize,
    stride: usize,
    seed: u64,
) -> Result<TrainedModel> {
    let (train, _) = subspace_windows(rows, subspace, genome.window_size, stride)?;
    let mut model = TrainedModel::init(genome.clone(), subspace.clone(), &mut substream(seed, &[0]))?;
    nn::train(&mut model, &train, epochs, batch_size, &mut substream(seed, &[1]))?;
    model.weights.round_to_f32();
    Ok(model)
}

fn calibrated(model: TrainedModel, rows: &Matrix, percentile: f64) -> Result<ThresholdedModel> {
    let (_, val) = subspace_windows(rows, &model.subspace, model.genome.window_size, 1)?;
    let threshold = calibrate_threshold(&model, &val, percentile)?;
    Ok(ThresholdedModel { model, threshold })
}

/// Trains and calibrates the fixed all-feature reference autoencoder.
pub fn baseline_detector(
    cfg: &BaselineConfig,
    rows: &Matrix,
    epochs: usize,
    batch_size: usize,
    percentile: f64,
    seed: u64,
) -> Result<EnsembleModel> {
    let genome = ModelGenome::uniform(
        LayerKind::FullyConnected,
        cfg.window_size,
        &cfg.channels,
        1,
        cfg.learning_rate,
        cfg.activation,
    );
    let all: Subspace = (0..rows.cols()).collect();
    let model = train_final(
        &genome,
        &all,
        rows,
        epochs,
        batch_size,
        1,
        derive_seed(seed, &[tags::BASELINE]),
    )?;
    EnsembleModel::new(rows.cols(), vec![calibrated(model, rows, percentile)?])
}

struct Inputs {
    scaler: MinMaxScaler,
    train: TimeSeriesDataset,
    test: Option<TimeSeriesDataset>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    if cfg.data.train.as_os_str().is_empty() {
        return Err(Error::Config("data.train is not set".into()));
    }
    let raw = load_csv(&cfg.data.train, false)?;
    let scaler = MinMaxScaler::fit(&raw.values);
    let train = scaler.transform_dataset(&raw)?;
    let test = if cfg.data.test.as_os_str().is_empty() {
        None
    } else {
        let t = load_csv(&cfg.data.test, true)?;
        if t.num_features() != train.num_features() {
            return Err(Error::Data(format!(
                "test data has {} features, training data {}",
                t.num_features(),
                train.num_features()
            )));
        }
        Some(scaler.transform_dataset(&t)?)
    };
    Ok(Inputs { scaler, train, test })
}

/// Runs every level, then evaluates on the test set when one is configured.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    run_until(cfg, Level::Ensemble, true)
}

/// Runs (or resumes) the levels up to and including `last`.
pub fn run_until(cfg: &RunConfig, last: Level, evaluate: bool) -> Result<RunManifest> {
    cfg.validate()?;
    let id = run_id(cfg)?;
    let dir = cfg.out_dir.join(&id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("config.toml"), cfg.to_toml()?)?;
    let pool = WorkerPool::new(cfg.workers)?;
    let inputs = load_inputs(cfg)?;
    let mut run = Run {
        cfg,
        dir: dir.clone(),
        pool,
        inputs,
        artifacts: vec!["config.toml".into()],
    };

    let mut levels = Vec::new();
    let mut state = State::default();
    for level in Level::ALL.into_iter().filter(|l| *l <= last) {
        let marker = dir.join(format!("{}.done", level.name()));
        let resumed = marker.exists();
        let started = Instant::now();
        let outcome = if resumed {
            run.load(level, &mut state)
        } else {
            run.compute(level, &mut state)
        };
        outcome.map_err(|e| Error::Level {
            level: level.name().into(),
            source: Box::new(e),
        })?;
        if !resumed {
            write_file(&marker, "")?;
        }
        levels.push(LevelTiming {
            level: level.name().into(),
            wall_seconds: started.elapsed().as_secs_f64(),
            resumed,
        });
    }

    let (mut metrics, mut baseline) = (None, None);
    if evaluate && last == Level::Ensemble {
        if let Some(test) = &run.inputs.test {
            let labels = test
                .labels
                .as_deref()
                .ok_or_else(|| Error::Data("test data has no labels".into()))?;
            let ensemble = state.ensemble.as_ref().expect("ensemble level ran");
            let report = evaluate_f1(&predict_series(ensemble, &test.values)?, labels)?;
            write_file(&dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            run.artifacts.push("report.json".into());
            metrics = Some(report);
            if cfg.baseline.enabled {
                let path = dir.join("baseline.json");
                let report = if path.exists() {
                    serde_json::from_str(&read_file(&path)?)?
                } else {
                    let b = baseline_detector(
                        &cfg.baseline,
                        &run.inputs.train.values,
                        cfg.training.final_epochs,
                        cfg.training.batch_size,
                        cfg.ensemble.percentile,
                        cfg.seed,
                    )?;
                    let report = evaluate_f1(&predict_series(&b, &test.values)?, labels)?;
                    write_file(&path, serde_json::to_string_pretty(&report)? + "\n")?;
                    report
                };
                run.artifacts.push("baseline.json".into());
                baseline = Some(report);
            }
        }
    }

    let manifest = RunManifest {
        run_id: id,
        run_dir: dir.clone(),
        config: cfg.clone(),
        levels,
        artifacts: run.artifacts,
        metrics,
        baseline,
    };
    write_file(
        &dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

#[derive(Default)]
struct State {
    reduced: Option<Matrix>,
    partition: Option<SubspacePartition>,
    trained: Vec<TrainedModel>,
    tuned: Vec<TrainedModel>,
    ensemble: Option<EnsembleModel>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    pool: WorkerPool,
    inputs: Inputs,
    artifacts: Vec<String>,
}

impl Run<'_> {
    fn subdir(&self, name: &str) -> Result<PathBuf> {
        let d = self.dir.join(name);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    fn log(&self, name: &str) -> Result<JsonLines> {
        JsonLines::open(self.dir.join(name))
    }

    fn model_files(&mut self, sub: &str, k: usize) {
        for i in 0..k {
            self.artifacts.push(format!("{sub}/subspace_{i}.genome.json"));
            self.artifacts.push(format!("{sub}/subspace_{i}.weights.bin"));
        }
    }

    fn compute(&mut self, level: Level, st: &mut State) -> Result<()> {
        let cfg = self.cfg;
        match level {
            Level::Reduce => {
                write_file(
                    &self.dir.join("scaler.json"),
                    serde_json::to_string_pretty(&self.inputs.scaler)?,
                )?;
                let reduced = reduce(&self.inputs.train, cfg.data.sigma, cfg.data.aggregation)?;
                let ds = TimeSeriesDataset::new(reduced.values.clone(), None, self.inputs.train.feature_names.clone())?;
                write_csv(&ds, self.dir.join("reduced_train.csv"))?;
                st.reduced = Some(reduced.values);
            }
            Level::Subspaces => {
                let mut log = self.log("subspaces.jsonl")?;
                let mut failed = None;
                let outcome = evolve_subspaces(
                    st.reduced.as_ref().expect("reduce ran"),
                    &cfg.subspaces,
                    &self.pool,
                    derive_seed(cfg.seed, &[tags::SUBSPACES]),
                    |r| {
                        if let Err(e) = log.append(r) {
                            failed.get_or_insert(e);
                        }
                    },
                )?;
                if let Some(e) = failed {
                    return Err(e);
                }
                let best = outcome.best().solution.clone();
                write_file(&self.dir.join("partition.json"), partition_to_json(&best)?)?;
                st.partition = Some(best);
            }
            Level::Models => {
                let dir = self.subdir("models")?;
                let partition = st.partition.clone().expect("subspaces ran");
                let reduced = st.reduced.as_ref().expect("reduce ran");
                let mut log = self.log("models.jsonl")?;
                st.trained.clear();
                for (i, g) in partition.subspaces.iter().enumerate() {
                    let data = SubspaceData::new(reduced, g.clone(), cfg.data.stride)?;
                    let mut failed = None;
                    let name = format!("models/{i}");
                    let outcome = evolve_subspace_models(
                        &data,
                        &cfg.models,
                        &self.pool,
                        derive_seed(cfg.seed, &[tags::MODELS, i as u64]),
                        |r| {
                            let record = GenerationRecord {
                                level: name.clone(),
                                ..r.clone()
                            };
                            if let Err(e) = log.append(&record) {
                                failed.get_or_insert(e);
                            }
                        },
                    )?;
                    if let Some(e) = failed {
                        return Err(e);
                    }
                    let mut ranked = outcome.population;
                    ranked.sort_by(|a, b| b.fitness.total_cmp(&a.fitness));
                    let seed = derive_seed(cfg.seed, &[tags::TRAINING, i as u64]);
                    let mut model = None;
                    let mut last_err = None;
                    // Fall back to the next genome when final training diverges.
                    for cand in ranked.iter().filter(|c| c.fitness.is_finite()) {
                        match train_final(
                            &cand.solution,
                            g,
                            &self.inputs.train.values,
                            cfg.training.final_epochs,
                            cfg.training.batch_size,
                            cfg.data.stride,
                            seed,
                        ) {
                            Ok(m) => {
                                model = Some(m);
                                break;
                            }
                            Err(e @ Error::Divergence { .. }) => last_err = Some(e),
                            Err(e) => return Err(e),
                        }
                    }
                    let model = model.ok_or_else(|| {
                        last_err.unwrap_or_else(|| Error::Data(format!("no trainable genome for subspace {i}")))
                    })?;
                    save_model(&model, &dir, &format!("subspace_{i}"))?;
                    st.trained.push(model);
                }
            }
            Level::FineTune => {
                let dir = self.subdir("finetune")?;
                st.tuned.clear();
                for (i, model) in st.trained.iter().enumerate() {
                    let (train, _) = subspace_windows(
                        &self.inputs.train.values,
                        &model.subspace,
                        model.genome.window_size,
                        cfg.data.stride * cfg.data.sigma,
                    )?;
                    let mut log = self.log(&format!("finetune_{i}.jsonl"))?;
                    let mut failed = None;
                    let outcome = fine_tune(
                        model,
                        &train,
                        &cfg.finetune,
                        &self.pool,
                        derive_seed(cfg.seed, &[tags::FINETUNE, i as u64]),
                        |r| {
                            if let Err(e) = log.append(r) {
                                failed.get_or_insert(e);
                            }
                        },
                    )?;
                    if let Some(e) = failed {
                        return Err(e);
                    }
                    let best = outcome.best().model.clone();
                    save_model(&best, &dir, &format!("subspace_{i}"))?;
                    st.tuned.push(best);
                }
            }
            Level::Ensemble => {
                let members = st
                    .tuned
                    .iter()
                    .map(|m| calibrated(m.clone(), &self.inputs.train.values, cfg.ensemble.percentile))
                    .collect::<Result<Vec<_>>>()?;
                let e = EnsembleModel::new(self.inputs.train.num_features(), members)?;
                save_ensemble(&e, self.dir.join("ensemble"))?;
                st.ensemble = Some(e);
            }
        }
        self.record_artifacts(level, st);
        Ok(())
    }

    fn load(&mut self, level: Level, st: &mut State) -> Result<()> {
        match level {
            Level::Reduce => {
                let ds = load_csv(self.dir.join("reduced_train.csv"), false)?;
                st.reduced = Some(ds.values);
            }
            Level::Subspaces => {
                st.partition = Some(partition_from_json(&read_file(&self.dir.join("partition.json"))?)?);
            }
            Level::Models | Level::FineTune => {
                let partition = st.partition.as_ref().expect("subspaces loaded");
                let sub = if level == Level::Models { "models" } else { "finetune" };
                let dir = self.dir.join(sub);
                let models = partition
                    .subspaces
                    .iter()
                    .enumerate()
                    .map(|(i, g)| load_model(&dir, &format!("subspace_{i}"), g.clone()))
                    .collect::<Result<Vec<_>>>()?;
                if level == Level::Models {
                    st.trained = models;
                } else {
                    st.tuned = models;
                }
            }
            Level::Ensemble => {
                st.ensemble = Some(load_ensemble(self.dir.join("ensemble").join("ensemble.json"))?);
            }
        }
        self.record_artifacts(level, st);
        Ok(())
    }

    fn record_artifacts(&mut self, level: Level, st: &State) {
        let k = st.partition.as_ref().map_or(0, SubspacePartition::k);
        match level {
            Level::Reduce => {
                self.artifacts.push("scaler.json".into());
                self.artifacts.push("reduced_train.csv".into());
            }
            Level::Subspaces => {
                self.artifacts.push("partition.json".into());
                self.artifacts.push("subspaces.jsonl".into());
            }
            Level::Models => {
                self.model_files("models", k);
                self.artifacts.push("models.jsonl".into());
            }
            Level::FineTune => {
                self.model_files("finetune", k);
                self.artifacts.extend((0..k).map(|i| format!("finetune_{i}.jsonl")));
            }
            Level::Ensemble => {
                self.artifacts.push("ensemble/ensemble.json".into());
                for i in 0..k {
                    self.artifacts.push(format!("ensemble/member_{i}.genome.json"));
                    self.artifacts.push(format!("ensemble/member_{i}.weights.bin"));
                }
            }
        }
        self.artifacts.push(format!("{}.done", level.name()));
    }
}
