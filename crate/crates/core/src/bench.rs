//! Wall-clock scaling of the two parallel evaluation phases: model fitness
//! (train and score) and fine-tuning false-positive counting.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::finetune::{fine_tune, FineTuneConfig};
use crate::model_evolution::{model_fitness, ModelEvolutionConfig, SubspaceData};
use crate::nn::{ModelGenome, TrainedModel};
use crate::pipeline::subspace_windows;
use crate::pool::WorkerPool;
use crate::rng::{derive_seed, substream, tags};
use crate::subspace::Subspace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub workers: usize,
    pub population: usize,
    pub model_seconds: f64,
    pub finetune_seconds: f64,
    /// `T(1 worker) / T(w workers)` at the fixed population.
    pub model_speedup: f64,
    pub finetune_speedup: f64,
    /// `T(1 worker, base population) / T(w workers, w * base population)`.
    pub model_scaleup: f64,
    pub finetune_scaleup: f64,
    /// Raw times of the scaleup runs.
    pub model_scaleup_seconds: f64,
    pub finetune_scaleup_seconds: f64,
    pub fitness: Vec<f64>,
    pub false_positives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub host_cores: usize,
    pub population: usize,
    pub scaleup_base: usize,
    pub points: Vec<ScalingPoint>,
    /// True when every worker count produced the same fitness values.
    pub identical_results: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub population: usize,
    /// Population per worker for the scaleup runs.
    pub scaleup_base: usize,
    pub models: ModelEvolutionConfig,
    pub finetune: FineTuneConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            population: 16,
            scaleup_base: 4,
            models: ModelEvolutionConfig::default(),
            finetune: FineTuneConfig::default(),
            seed: 0,
        }
    }
}

fn timed<R>(f: impl FnOnce() -> Result<R>) -> Result<(f64, R)> {
    let t = Instant::now();
    let r = f()?;
    Ok((t.elapsed().as_secs_f64(), r))
}

struct Phases<'a> {
    cfg: &'a BenchConfig,
    data: SubspaceData,
    rows: &'a Matrix,
    genomes: Vec<ModelGenome>,
    model: TrainedModel,
}

impl Phases<'_> {
    fn model_phase(&self, pool: &WorkerPool, n: usize) -> Result<(f64, Vec<f64>)> {
        let genomes: Vec<ModelGenome> = self.genomes.iter().cycle().take(n).cloned().collect();
        let (epochs, batch) = (self.cfg.models.epochs, self.cfg.models.batch_size);
        timed(|| {
            pool.map(&genomes, |i, g| {
                model_fitness(
                    g,
                    &self.data,
                    epochs,
                    batch,
                    derive_seed(self.cfg.seed, &[tags::BENCH, i as u64]),
                )
            })
            .into_iter()
            .collect()
        })
    }

    fn finetune_phase(&self, pool: &WorkerPool, n: usize) -> Result<(f64, Vec<usize>)> {
        let (train, _) = subspace_windows(self.rows, &self.model.subspace, self.model.genome.window_size, 1)?;
        let cfg = FineTuneConfig {
            population_size: n,
            generations: 1,
            ..self.cfg.finetune.clone()
        };
        timed(|| {
            let out = fine_tune(&self.model, &train, &cfg, pool, self.cfg.seed, |_| {})?;
            Ok(out.history.iter().map(|r| r.best_fp).chain([out.initial_fp]).collect())
        })
    }
}

/// Times both phases at every worker count. `rows` is scaled training data;
/// all of its features form one subspace.
pub fn bench_scaling(rows: &Matrix, cfg: &BenchConfig, worker_counts: &[usize]) -> Result<ScalingReport> {
    if worker_counts.len() < 2 || worker_counts[0] != 1 || worker_counts.contains(&0) {
        return Err(Error::Argument(
            "worker counts must start at 1 and list at least two counts".into(),
        ));
    }
    if cfg.population == 0 || cfg.scaleup_base == 0 {
        return Err(Error::Argument("bench populations must be positive".into()));
    }
    let all: Subspace = (0..rows.cols()).collect();
    let space = cfg.models.space_for(all.len());
    let mut rng = substream(cfg.seed, &[tags::BENCH]);
    let genomes: Vec<ModelGenome> = (0..cfg.population).map(|_| space.random_genome(&mut rng)).collect();
    let model = TrainedModel::init(genomes[0].clone(), all.clone(), &mut rng)?;
    let phases = Phases {
        cfg,
        data: SubspaceData::new(rows, all, 1)?,
        rows,
        genomes,
        model,
    };

    let mut points: Vec<ScalingPoint> = Vec::new();
    for &w in worker_counts {
        let pool = WorkerPool::new(w)?;
        let (model_seconds, fitness) = phases.model_phase(&pool, cfg.population)?;
        let (finetune_seconds, false_positives) = phases.finetune_phase(&pool, cfg.population)?;
        let (ms_up, _) = phases.model_phase(&pool, cfg.scaleup_base * w)?;
        let (fs_up, _) = phases.finetune_phase(&pool, cfg.scaleup_base * w)?;
        points.push(ScalingPoint {
            workers: w,
            population: cfg.population,
            model_seconds,
            finetune_seconds,
            model_speedup: 0.0,
            finetune_speedup: 0.0,
            model_scaleup: 0.0,
            finetune_scaleup: 0.0,
            model_scaleup_seconds: ms_up,
            finetune_scaleup_seconds: fs_up,
            fitness,
            false_positives,
        });
    }
    let base = points[0].clone();
    for p in &mut points {
        p.model_speedup = base.model_seconds / p.model_seconds;
        p.finetune_speedup = base.finetune_seconds / p.finetune_seconds;
        p.model_scaleup = base.model_scaleup_seconds / p.model_scaleup_seconds;
        p.finetune_scaleup = base.finetune_scaleup_seconds / p.finetune_scaleup_seconds;
    }
    let identical_results = points
        .iter()
        .all(|p| p.fitness == base.fitness && p.false_positives == base.false_positives);
    Ok(ScalingReport {
        host_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
        population: cfg.population,
        scaleup_base: cfg.scaleup_base,
        points,
        identical_results,
    })
}
