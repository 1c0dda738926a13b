use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use evoad_bench::scaled_rows;
use evoad_core::data::{reduce, Aggregation};
use evoad_core::finetune::{count_false_positives, mutate_weights};
use evoad_core::model_evolution::{model_fitness, SubspaceData};
use evoad_core::nn::{loss_and_gradient, Activation, LayerKind};
use evoad_core::pipeline::subspace_windows;
use evoad_core::rng::substream;
use evoad_core::{ModelGenome, Subspace, TimeSeriesDataset, TrainedModel, WorkerPool};

fn genome(kind: LayerKind) -> ModelGenome {
    ModelGenome::uniform(kind, 4, &[32, 24, 16], 3, 0.01, Activation::Tanh)
}

fn gradients(c: &mut Criterion) {
    let rows = scaled_rows(8, 4000, 0);
    let g: Subspace = (0..8).collect();
    let (windows, _) = subspace_windows(&rows, &g, 4, 1).unwrap();
    let mut group = c.benchmark_group("loss_and_gradient");
    for kind in [LayerKind::FullyConnected, LayerKind::Conv1d] {
        let model = TrainedModel::init(genome(kind), g.clone(), &mut substream(0, &[])).unwrap();
        group.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| loss_and_gradient(black_box(&model), &windows).unwrap())
        });
    }
    group.finish();
}

fn reduction(c: &mut Criterion) {
    let rows = scaled_rows(8, 20_000, 0);
    let ds = TimeSeriesDataset::new(rows, None, (0..8).map(|i| format!("f{i}")).collect()).unwrap();
    c.bench_function("reduce_median_sigma5", |b| {
        b.iter(|| reduce(black_box(&ds), 5, Aggregation::Median).unwrap())
    });
}

fn population(c: &mut Criterion) {
    let rows = scaled_rows(8, 4000, 1);
    let g: Subspace = (0..8).collect();
    let data = SubspaceData::new(&rows, g.clone(), 1).unwrap();
    let genomes = vec![genome(LayerKind::FullyConnected); 8];
    let model = TrainedModel::init(genomes[0].clone(), g.clone(), &mut substream(1, &[])).unwrap();
    let (windows, _) = subspace_windows(&rows, &g, 4, 1).unwrap();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());

    let mut group = c.benchmark_group("population");
    group.sample_size(10);
    for workers in [1, cores.max(2)] {
        let pool = WorkerPool::new(workers).unwrap();
        group.bench_with_input(BenchmarkId::new("model_fitness", workers), &pool, |b, pool| {
            b.iter(|| pool.map(&genomes, |i, g| model_fitness(g, &data, 1, 32, i as u64).unwrap()))
        });
        let mutants: Vec<TrainedModel> = (0..8u64)
            .map(|i| {
                let mut m = model.clone();
                m.weights = mutate_weights(&model.weights, 0.02, 1.0 / 256.0, &mut substream(i, &[]));
                m
            })
            .collect();
        group.bench_with_input(BenchmarkId::new("false_positives", workers), &pool, |b, pool| {
            b.iter(|| pool.map(&mutants, |_, m| count_false_positives(m, &windows, 2.0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, gradients, reduction, population);
criterion_main!(benches);
