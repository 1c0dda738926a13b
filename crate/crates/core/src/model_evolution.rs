//! Architecture search: one independent population of autoencoder genomes
//! per subspace, scored by the size-weighted train/validation loss and
//! selected with a diversity-preserving rule.

use std::sync::OnceLock;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{make_windows, split_train_val, Matrix, WindowedDataset};
use crate::error::{Error, Result};
use crate::genetic::{
    evolve, truncation_select, EvolutionConfig, EvolutionOutcome, GenerationRecord, GeneticOperators, Scored,
};
use crate::nn::{self, Activation, GenomeBounds, LayerKind, LayerSpec, ModelGenome, TrainedModel};
use crate::pool::WorkerPool;
use crate::rng::{substream, Rng};
use crate::subspace::Subspace;

/// Parameters the architecture operators need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchitectureSpace {
    pub bounds: GenomeBounds,
    pub layer_kind: LayerKind,
    /// Conv kernel width, already capped at the subspace width.
    pub kernel_size: usize,
    /// Largest channel increase for a layer appended by length mutation.
    pub channel_increment: usize,
    pub activation: Activation,
}

impl ArchitectureSpace {
    fn layer(&self, in_channels: usize, out_channels: usize) -> LayerSpec {
        match self.layer_kind {
            LayerKind::FullyConnected => LayerSpec::fully_connected(in_channels, out_channels),
            LayerKind::Conv1d => LayerSpec::conv1d(in_channels, out_channels, self.kernel_size),
        }
    }

    /// Uniformly drawn valid genome; the learning rate is log-uniform.
    pub fn random_genome(&self, rng: &mut Rng) -> ModelGenome {
        let b = &self.bounds;
        let layers = rng.random_range(b.min_layers..=b.max_layers);
        let window = rng.random_range(1..=b.max_window);
        let widths: Vec<usize> = (0..layers)
            .map(|_| rng.random_range(b.min_channels..=b.max_channels))
            .collect();
        let lr = (rng.random_range(b.min_learning_rate.ln()..=b.max_learning_rate.ln())).exp();
        let mut prev = window;
        let encoder_layers = widths
            .iter()
            .map(|&c| {
                let l = self.layer(prev, c);
                prev = c;
                l
            })
            .collect();
        ModelGenome {
            encoder_layers,
            window_size: window,
            learning_rate: lr.clamp(b.min_learning_rate, b.max_learning_rate),
            activation: self.activation,
        }
    }
}

/// A concrete draw of the single-model mutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelMutation {
    /// Sets layer `layer`'s output width (and the next layer's input).
    Channels {
        layer: usize,
        channels: usize,
    },
    /// Truncates to `target` layers, or appends layers with the given widths.
    Length {
        target: usize,
        appended: Vec<usize>,
    },
    Window {
        size: usize,
    },
}

pub fn sample_mutation(g: &ModelGenome, space: &ArchitectureSpace, rng: &mut Rng) -> ModelMutation {
    let b = &space.bounds;
    match rng.random_range(0..3) {
        0 => {
            let layer = rng.random_range(0..g.num_layers());
            let l = g.encoder_layers[layer];
            // For inner layers F[l]_oc == F[l+1]_ic, so this is the range
            // between the layer's input and the next layer's input.
            let lo = l.in_channels.min(l.out_channels);
            let hi = l.in_channels.max(l.out_channels);
            ModelMutation::Channels {
                layer,
                channels: b.clamp_channels(rng.random_range(lo..=hi)),
            }
        }
        1 => {
            let target = rng.random_range(b.min_layers..=b.max_layers);
            let mut appended = Vec::new();
            let mut prev = g.latent_channels();
            for _ in g.num_layers()..target {
                let c = b.clamp_channels(rng.random_range(prev..=prev + space.channel_increment));
                appended.push(c);
                prev = c;
            }
            ModelMutation::Length { target, appended }
        }
        _ => ModelMutation::Window {
            size: rng.random_range(1..=b.max_window),
        },
    }
}

pub fn apply_mutation(g: &ModelGenome, m: &ModelMutation, space: &ArchitectureSpace) -> ModelGenome {
    let mut out = g.clone();
    match m {
        ModelMutation::Channels { layer, channels } => {
            out.encoder_layers[*layer].out_channels = *channels;
            if let Some(next) = out.encoder_layers.get_mut(layer + 1) {
                next.in_channels = *channels;
            }
        }
        ModelMutation::Length { target, appended } => {
            if *target < out.num_layers() {
                out.encoder_layers.truncate(*target);
            } else {
                let mut prev = out.latent_channels();
                for &c in appended {
                    out.encoder_layers.push(space.layer(prev, c));
                    prev = c;
                }
            }
        }
        ModelMutation::Window { size } => {
            out.window_size = *size;
            out.encoder_layers[0].in_channels = *size;
        }
    }
    out
}

pub fn mutate_model(g: &ModelGenome, space: &ArchitectureSpace, rng: &mut Rng) -> ModelGenome {
    let m = sample_mutation(g, space, rng);
    apply_mutation(g, &m, space)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelCrossover {
    /// Swap encoder layer `layer` (and its decoder mirror) between children.
    ExchangeLayer { layer: usize },
    /// The longer parent's tail moves to the shorter child.
    ExchangeLength,
}

pub fn apply_crossover(f1: &ModelGenome, f2: &ModelGenome, op: ModelCrossover) -> (ModelGenome, ModelGenome) {
    let mut c1 = f1.clone();
    let mut c2 = f2.clone();
    match op {
        ModelCrossover::ExchangeLayer { layer } => {
            c1.encoder_layers[layer] = f2.encoder_layers[layer];
            c2.encoder_layers[layer] = f1.encoder_layers[layer];
            c1.repair_chain();
            c2.repair_chain();
        }
        ModelCrossover::ExchangeLength => {
            let (l1, l2) = (f1.num_layers(), f2.num_layers());
            if l1 != l2 {
                let (long, short, long_child, short_child) = if l1 > l2 {
                    (f1, f2, &mut c1, &mut c2)
                } else {
                    (f2, f1, &mut c2, &mut c1)
                };
                let ls = short.num_layers();
                long_child.encoder_layers.truncate(ls);
                long_child.encoder_layers[ls - 1].out_channels = short.encoder_layers[ls - 1].out_channels;
                short_child.encoder_layers.extend_from_slice(&long.encoder_layers[ls..]);
                long_child.repair_chain();
                short_child.repair_chain();
            }
        }
    }
    (c1, c2)
}

pub fn crossover_models(f1: &ModelGenome, f2: &ModelGenome, rng: &mut Rng) -> (ModelGenome, ModelGenome) {
    let op = if rng.random_bool(0.5) {
        ModelCrossover::ExchangeLayer {
            layer: rng.random_range(0..f1.num_layers().min(f2.num_layers())),
        }
    } else {
        ModelCrossover::ExchangeLength
    };
    apply_crossover(f1, f2, op)
}

/// Architectural dissimilarity: layer-count difference plus the relative
/// width difference of index-aligned encoder layers.
pub fn genome_distance(a: &ModelGenome, b: &ModelGenome) -> f64 {
    let depth = a.num_layers().abs_diff(b.num_layers()) as f64;
    let widths: f64 = a
        .encoder_layers
        .iter()
        .zip(&b.encoder_layers)
        .map(|(la, lb)| {
            let (ga, gb) = (la.out_channels as f64, lb.out_channels as f64);
            (ga - gb).abs() / ga.min(gb)
        })
        .sum();
    depth + widths
}

/// Top `n_elite` by fitness, then the `n_diverse` remaining individuals
/// farthest from the best one (ties: higher fitness, then lower index).
pub fn select_with_diversity(
    pool: Vec<Scored<ModelGenome>>,
    n_elite: usize,
    n_diverse: usize,
) -> Vec<Scored<ModelGenome>> {
    let mut ranked: Vec<(usize, Scored<ModelGenome>)> = pool.into_iter().enumerate().collect();
    ranked.sort_by(|(ia, a), (ib, b)| b.fitness.total_cmp(&a.fitness).then(ia.cmp(ib)));
    let rest = ranked.split_off(n_elite.min(ranked.len()));
    let mut out: Vec<Scored<ModelGenome>> = ranked.into_iter().map(|(_, s)| s).collect();
    if let Some(best) = out.first().map(|s| s.solution.clone()) {
        let mut rest: Vec<(f64, usize, Scored<ModelGenome>)> = rest
            .into_iter()
            .map(|(i, s)| (genome_distance(&best, &s.solution), i, s))
            .collect();
        rest.sort_by(|(da, ia, a), (db, ib, b)| {
            db.total_cmp(da).then(b.fitness.total_cmp(&a.fitness)).then(ia.cmp(ib))
        });
        out.extend(rest.into_iter().take(n_diverse).map(|(_, _, s)| s));
    }
    out
}

/// Size-weighted train/validation loss, negated.
pub fn weighted_fitness(n_train: usize, loss_train: f64, n_val: usize, loss_val: f64) -> f64 {
    -((n_train as f64 * loss_train + n_val as f64 * loss_val) / (n_train + n_val) as f64)
}

/// Trains a fresh model of `genome` on `train` and returns its weighted
/// fitness; divergence scores negative infinity.
pub fn train_and_score(
    genome: &ModelGenome,
    subspace: &Subspace,
    train: &WindowedDataset,
    val: &WindowedDataset,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Argument(
            "fitness needs non-empty train and validation windows".into(),
        ));
    }
    let mut model = TrainedModel::init(genome.clone(), subspace.clone(), &mut substream(seed, &[0]))?;
    match nn::train(&mut model, train, epochs, batch_size, &mut substream(seed, &[1])) {
        Ok(_) => {}
        Err(Error::Divergence { .. }) => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    }
    let lt = nn::loss(&model, train)?;
    let lv = nn::loss(&model, val)?;
    let f = weighted_fitness(train.len(), lt, val.len(), lv);
    Ok(if f.is_nan() { f64::NEG_INFINITY } else { f })
}

/// Reduced training rows of one subspace, with lazily built and cached
/// chronological splits for every window size.
#[derive(Debug)]
pub struct SubspaceData {
    pub subspace: Subspace,
    rows: Matrix,
    stride: usize,
    splits: Vec<OnceLock<Option<(WindowedDataset, WindowedDataset)>>>,
}

impl SubspaceData {
    pub fn new(full_rows: &Matrix, subspace: Subspace, stride: usize) -> Result<Self> {
        let cols: Vec<usize> = subspace.iter().collect();
        if cols.is_empty() || cols.iter().any(|&c| c >= full_rows.cols()) {
            return Err(Error::Argument("subspace does not fit the data".into()));
        }
        let data = (0..full_rows.rows())
            .flat_map(|r| cols.iter().map(move |&c| full_rows.get(r, c)))
            .collect();
        Ok(Self {
            rows: Matrix::new(full_rows.rows(), cols.len(), data)?,
            subspace,
            stride,
            splits: (0..=nn::genome::MAX_WINDOW).map(|_| OnceLock::new()).collect(),
        })
    }

    /// `None` when the series is too short for five windows.
    pub fn split(&self, window: usize) -> Result<&(WindowedDataset, WindowedDataset)> {
        let slot = self
            .splits
            .get(window)
            .ok_or_else(|| Error::Argument(format!("window size {window} out of range")))?;
        slot.get_or_init(|| {
            make_windows(&self.rows, None, window, self.stride)
                .and_then(|w| split_train_val(&w))
                .ok()
        })
        .as_ref()
        .ok_or_else(|| Error::Data(format!("too few rows for windows of {window} steps")))
    }
}

/// Trains `g` on the subspace's reduced data and scores it.
pub fn model_fitness(g: &ModelGenome, data: &SubspaceData, epochs: usize, batch_size: usize, seed: u64) -> Result<f64> {
    let (train, val) = data.split(g.window_size)?;
    train_and_score(g, &data.subspace, train, val, epochs, batch_size, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEvolutionConfig {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_probability: f64,
    pub crossover_probability: f64,
    pub bounds: GenomeBounds,
    pub layer_kind: LayerKind,
    pub kernel_size: usize,
    pub activation: Activation,
    pub channel_increment: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Survivors chosen for distance from the best rather than fitness.
    pub n_diverse: usize,
    pub diversity_selection: bool,
}

impl Default for ModelEvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 24,
            generations: 16,
            mutation_probability: 0.5,
            crossover_probability: 0.5,
            bounds: GenomeBounds::default(),
            layer_kind: LayerKind::FullyConnected,
            kernel_size: 3,
            activation: Activation::Tanh,
            channel_increment: 64,
            epochs: 5,
            batch_size: 32,
            n_diverse: 6,
            diversity_selection: true,
        }
    }
}

impl ModelEvolutionConfig {
    pub fn evolution(&self, seed: u64) -> EvolutionConfig {
        EvolutionConfig {
            population_size: self.population_size,
            generations: self.generations,
            mutation_probability: self.mutation_probability,
            crossover_probability: self.crossover_probability,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.evolution(0).validate()?;
        self.bounds.validate()?;
        if self.kernel_size == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "kernel size, epochs and batch size must be positive".into(),
            ));
        }
        if self.diversity_selection && self.n_diverse >= self.population_size {
            return Err(Error::Config("n_diverse must leave at least one elite slot".into()));
        }
        Ok(())
    }

    pub fn space_for(&self, width: usize) -> ArchitectureSpace {
        ArchitectureSpace {
            bounds: self.bounds,
            layer_kind: self.layer_kind,
            kernel_size: self.kernel_size.min(width).max(1),
            channel_increment: self.channel_increment,
            activation: self.activation,
        }
    }
}

struct ModelOperators(ArchitectureSpace);

impl GeneticOperators<ModelGenome> for ModelOperators {
    fn crossover(&self, a: &ModelGenome, b: &ModelGenome, rng: &mut Rng) -> (ModelGenome, ModelGenome) {
        crossover_models(a, b, rng)
    }

    fn mutate(&self, s: &ModelGenome, rng: &mut Rng) -> ModelGenome {
        mutate_model(s, &self.0, rng)
    }
}

/// Evolves the population of one subspace.
pub fn evolve_subspace_models(
    data: &SubspaceData,
    cfg: &ModelEvolutionConfig,
    pool: &WorkerPool,
    seed: u64,
    on_generation: impl FnMut(&GenerationRecord),
) -> Result<EvolutionOutcome<ModelGenome>> {
    cfg.validate()?;
    let space = cfg.space_for(data.subspace.len());
    let mut rng = substream(seed, &[0xA11]);
    let init: Vec<ModelGenome> = (0..cfg.population_size)
        .map(|_| space.random_genome(&mut rng))
        .collect();
    let (epochs, batch) = (cfg.epochs, cfg.batch_size);
    let fitness = |g: &ModelGenome, s: u64| model_fitness(g, data, epochs, batch, s);
    let n_diverse = cfg.n_diverse;
    let level = "models";
    if cfg.diversity_selection {
        evolve(
            init,
            &ModelOperators(space),
            fitness,
            |p, n| select_with_diversity(p, n - n_diverse, n_diverse),
            &cfg.evolution(seed),
            pool,
            level,
            on_generation,
        )
    } else {
        evolve(
            init,
            &ModelOperators(space),
            fitness,
            truncation_select,
            &cfg.evolution(seed),
            pool,
            level,
            on_generation,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(window: usize, widths: &[usize]) -> ModelGenome {
        ModelGenome::uniform(LayerKind::FullyConnected, window, widths, 1, 0.01, Activation::Tanh)
    }

    fn space(min_ch: usize, max_ch: usize, max_window: usize) -> ArchitectureSpace {
        ArchitectureSpace {
            bounds: GenomeBounds {
                min_channels: min_ch,
                max_channels: max_ch,
                max_window,
                ..GenomeBounds::default()
            },
            layer_kind: LayerKind::FullyConnected,
            kernel_size: 1,
            channel_increment: 16,
            activation: Activation::Tanh,
        }
    }

    fn widths(g: &ModelGenome) -> Vec<(usize, usize)> {
        g.encoder_layers
            .iter()
            .map(|l| (l.in_channels, l.out_channels))
            .collect()
    }

    #[test]
    fn channel_mutation_trace() {
        let g = chain(8, &[16, 32, 8]);
        let out = apply_mutation(
            &g,
            &ModelMutation::Channels { layer: 1, channels: 20 },
            &space(1, 64, 12),
        );
        assert_eq!(widths(&out), vec![(8, 16), (16, 20), (20, 8)]);
    }

    #[test]
    fn length_truncation_trace() {
        let g = chain(4, &[16, 20, 24, 28, 32]);
        let out = apply_mutation(
            &g,
            &ModelMutation::Length {
                target: 3,
                appended: vec![],
            },
            &space(16, 64, 12),
        );
        assert_eq!(widths(&out), vec![(4, 16), (16, 20), (20, 24)]);
        let dec: Vec<_> = out
            .decoder_layers()
            .iter()
            .map(|l| (l.in_channels, l.out_channels))
            .collect();
        assert_eq!(dec, vec![(24, 20), (20, 16), (16, 4)]);
    }

    #[test]
    fn window_mutation_forced_range() {
        let s = space(16, 64, 1);
        let g = chain(6, &[16, 32, 16]);
        let mut rng = substream(0, &[]);
        for _ in 0..50 {
            let out = apply_mutation(
                &g,
                &ModelMutation::Window {
                    size: rng.random_range(1..=1),
                },
                &s,
            );
            assert_eq!(out.window_size, 1);
            assert_eq!(out.encoder_layers[0].in_channels, 1);
        }
    }

    #[test]
    fn random_mutations_keep_genomes_valid() {
        let s = space(16, 96, 12);
        let mut rng = substream(1, &[]);
        let mut g = s.random_genome(&mut rng);
        for _ in 0..2000 {
            g = mutate_model(&g, &s, &mut rng);
            g.validate(&s.bounds).unwrap();
            let other = s.random_genome(&mut rng);
            let (a, b) = crossover_models(&g, &other, &mut rng);
            a.validate(&s.bounds).unwrap();
            b.validate(&s.bounds).unwrap();
        }
    }

    #[test]
    fn crossover_traces() {
        let f1 = chain(3, &[16, 20, 24, 28, 32]);
        let f2 = chain(5, &[40, 44, 48]);
        let (c1, c2) = apply_crossover(&f1, &f2, ModelCrossover::ExchangeLength);
        assert_eq!((c1.num_layers(), c2.num_layers()), (3, 5));
        assert_eq!(widths(&c1), vec![(3, 16), (16, 20), (20, 48)]);
        assert_eq!(widths(&c2), vec![(5, 40), (40, 44), (44, 48), (48, 28), (28, 32)]);

        let (c1, c2) = apply_crossover(&f1, &f2, ModelCrossover::ExchangeLayer { layer: 1 });
        assert_eq!(widths(&c1), vec![(3, 16), (16, 44), (44, 24), (24, 28), (28, 32)]);
        assert_eq!(widths(&c2), vec![(5, 40), (40, 20), (20, 48)]);

        for op in [
            ModelCrossover::ExchangeLength,
            ModelCrossover::ExchangeLayer { layer: 2 },
        ] {
            let (a, b) = apply_crossover(&f1, &f1, op);
            assert_eq!((&a, &b), (&f1, &f1));
        }
    }

    #[test]
    fn distance_examples() {
        let a = chain(2, &[16, 32, 64]);
        assert_eq!(genome_distance(&a, &a), 0.0);
        assert_eq!(genome_distance(&a, &chain(2, &[16, 48, 64])), 0.5);
        let long = chain(2, &[16, 32, 64, 20, 20]);
        assert_eq!(genome_distance(&long, &a), 2.0);
        assert_eq!(genome_distance(&a, &long), 2.0);
    }

    #[test]
    fn fitness_arithmetic() {
        assert!((weighted_fitness(8, 0.1, 2, 0.3) - -0.14).abs() < 1e-15);
        assert_eq!(weighted_fitness(8, 0.0, 2, 0.0), 0.0);
    }

    #[test]
    fn diversity_selection() {
        let s = |w: &[usize], f: f64| Scored {
            solution: chain(2, w),
            fitness: f,
        };
        let pool = vec![
            s(&[16, 16, 16], -0.1),
            s(&[16, 17, 16], -0.5),
            s(&[64, 64, 64], -0.5),
            s(&[16, 16, 17], -0.2),
        ];
        let pure = select_with_diversity(pool.clone(), 2, 0);
        assert_eq!(pure.iter().map(|x| x.fitness).collect::<Vec<_>>(), vec![-0.1, -0.2]);
        let div = select_with_diversity(pool, 2, 1);
        assert_eq!(div[0].fitness, -0.1);
        assert_eq!(div[2].solution, chain(2, &[64, 64, 64]));
    }
}
