//! Feature-subspace partitions and their genetic operators.
//!
//! A partition holds `K` subspaces. A feature may appear in any number of
//! subspaces, including none. Operators may leave a subspace empty;
//! [`repair`] refills it with one random feature before scoring.

use std::collections::BTreeSet;

use rand::seq::IteratorRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_windows, split_train_val, Matrix, WindowedDataset};
use crate::error::{Error, Result};
use crate::genetic::{
    evolve, truncation_select, EvolutionConfig, EvolutionOutcome, GenerationRecord, GeneticOperators,
};
use crate::model_evolution::train_and_score;
use crate::nn::{Activation, LayerKind, ModelGenome};
use crate::pool::WorkerPool;
use crate::rng::{derive_seed, substream, Rng};

/// Set of feature indices, iterated in ascending order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Subspace(BTreeSet<usize>);

impl Subspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.0.contains(&feature)
    }

    pub fn insert(&mut self, feature: usize) -> bool {
        self.0.insert(feature)
    }

    pub fn remove(&mut self, feature: usize) -> bool {
        self.0.remove(&feature)
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = usize> + ExactSizeIterator + '_ {
        self.0.iter().copied()
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl FromIterator<usize> for Subspace {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubspacePartition {
    pub num_features: usize,
    pub subspaces: Vec<Subspace>,
}

impl SubspacePartition {
    pub fn new(num_features: usize, subspaces: Vec<Subspace>) -> Result<Self> {
        let p = Self {
            num_features,
            subspaces,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.subspaces.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.subspaces.is_empty() {
            return Err(Error::Argument("partition has no subspaces".into()));
        }
        for (i, s) in self.subspaces.iter().enumerate() {
            if let Some(bad) = s.iter().find(|&f| f >= self.num_features) {
                return Err(Error::Argument(format!(
                    "subspace {i} holds feature {bad}, only {} features exist",
                    self.num_features
                )));
            }
        }
        Ok(())
    }

    /// Number of subspaces containing `feature`.
    pub fn occurrences(&self, feature: usize) -> usize {
        self.subspaces.iter().filter(|s| s.contains(feature)).count()
    }

    pub fn total_occurrences(&self) -> usize {
        self.subspaces.iter().map(Subspace::len).sum()
    }
}

const PARTITION_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PartitionDocument {
    schema_version: u32,
    num_features: usize,
    subspaces: Vec<Vec<usize>>,
}

pub fn partition_to_json(p: &SubspacePartition) -> Result<String> {
    Ok(serde_json::to_string_pretty(&PartitionDocument {
        schema_version: PARTITION_SCHEMA_VERSION,
        num_features: p.num_features,
        subspaces: p.subspaces.iter().map(|s| s.iter().collect()).collect(),
    })?)
}

pub fn partition_from_json(text: &str) -> Result<SubspacePartition> {
    let doc: PartitionDocument = serde_json::from_str(text)?;
    if doc.schema_version != PARTITION_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported partition schema version {}",
            doc.schema_version
        )));
    }
    for s in &doc.subspaces {
        if s.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("subspace indices must be strictly ascending".into()));
        }
    }
    SubspacePartition::new(
        doc.num_features,
        doc.subspaces.into_iter().map(Subspace::from_iter).collect(),
    )
    .map_err(|e| Error::Format(e.to_string()))
}

/// Pearson correlation matrix of the columns; pairs involving a constant
/// column are treated as uncorrelated.
pub fn correlation_matrix(values: &Matrix) -> Vec<Vec<f64>> {
    let m = values.cols();
    let n = values.rows() as f64;
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|c| {
            let col = values.column(c);
            let mean = col.iter().sum::<f64>() / n;
            col.into_iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut corr = vec![vec![0.0; m]; m];
    for i in 0..m {
        corr[i][i] = 1.0;
        for j in i + 1..m {
            let r = if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            corr[i][j] = r;
            corr[j][i] = r;
        }
    }
    corr
}

/// Average-linkage agglomerative clustering of features into `k` clusters
/// under the distance `1 - |corr|`. Clusters come back sorted by their
/// smallest member.
pub fn correlation_clusters(values: &Matrix, k: usize) -> Result<Vec<Vec<usize>>> {
    let m = values.cols();
    if k == 0 || k > m {
        return Err(Error::Argument(format!("cannot form {k} clusters from {m} features")));
    }
    let corr = correlation_matrix(values);
    let dist = |a: usize, b: usize| 1.0 - corr[a][b].abs();
    let mut clusters: Vec<Vec<usize>> = (0..m).map(|f| vec![f]).collect();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let total: f64 = clusters[i]
                    .iter()
                    .flat_map(|&a| clusters[j].iter().map(move |&b| (a, b)))
                    .map(|(a, b)| dist(a, b))
                    .sum();
                let d = total / (clusters[i].len() * clusters[j].len()) as f64;
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (_, i, j) = best;
        let merged = clusters.remove(j);
        clusters[i].extend(merged);
        clusters[i].sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    Ok(clusters)
}

/// Fills every empty subspace with one uniformly drawn feature.
pub fn repair(p: &mut SubspacePartition, rng: &mut Rng) {
    for s in &mut p.subspaces {
        if s.is_empty() {
            s.insert(rng.random_range(0..p.num_features));
        }
    }
}

/// Correlation-seeded initial population. Each individual starts from the
/// same clustering; every feature then moves to a uniformly random cluster
/// with probability `reassign_probability`.
pub fn init_population_correlation(
    train: &Matrix,
    k: usize,
    population_size: usize,
    reassign_probability: f64,
    seed: u64,
) -> Result<Vec<SubspacePartition>> {
    let clusters = correlation_clusters(train, k)?;
    let m = train.cols();
    let mut base = vec![0usize; m];
    for (c, members) in clusters.iter().enumerate() {
        for &f in members {
            base[f] = c;
        }
    }
    Ok((0..population_size)
        .map(|i| {
            let mut rng = substream(seed, &[i as u64]);
            let mut subspaces = vec![Subspace::new(); k];
            for (f, &c) in base.iter().enumerate() {
                let c = if rng.random_bool(reassign_probability) {
                    rng.random_range(0..k)
                } else {
                    c
                };
                subspaces[c].insert(f);
            }
            let mut p = SubspacePartition {
                num_features: m,
                subspaces,
            };
            repair(&mut p, &mut rng);
            p
        })
        .collect())
}

/// Split-point crossover of one subspace pair: features of `g1` strictly
/// below `gamma` and features of `g2` strictly above it.
pub fn crossover_subspace(g1: &Subspace, g2: &Subspace, gamma: usize) -> Subspace {
    g1.iter()
        .filter(|&f| f < gamma)
        .chain(g2.iter().filter(|&f| f > gamma))
        .collect()
}

/// Child partition of `s1` and `s2`; each split point is drawn uniformly
/// between the smallest and largest feature of the two parent subspaces.
pub fn subspace_crossover(s1: &SubspacePartition, s2: &SubspacePartition, rng: &mut Rng) -> SubspacePartition {
    let subspaces = s1
        .subspaces
        .iter()
        .zip(&s2.subspaces)
        .map(|(g1, g2)| {
            let lo = g1.first().into_iter().chain(g2.first()).min();
            let hi = g1.last().into_iter().chain(g2.last()).max();
            match (lo, hi) {
                (Some(lo), Some(hi)) => crossover_subspace(g1, g2, rng.random_range(lo..=hi)),
                _ => Subspace::new(),
            }
        })
        .collect();
    SubspacePartition {
        num_features: s1.num_features,
        subspaces,
    }
}

/// For each subspace `i`, with probability `p_m`, copies one of its
/// features into subspace `(i + 1) mod K`. Features are drawn from the
/// input partition and are kept in their source subspace.
pub fn moving_mutation(s: &SubspacePartition, p_m: f64, rng: &mut Rng) -> SubspacePartition {
    let k = s.k();
    let mut out = s.clone();
    for (i, src) in s.subspaces.iter().enumerate() {
        if rng.random::<f64>() < p_m {
            if let Some(f) = src.iter().choose(rng) {
                out.subspaces[(i + 1) % k].insert(f);
            }
        }
    }
    out
}

/// Removes each occurrence of a feature shared by `C` subspaces with
/// probability `1 - 1/C`.
pub fn vanishing_mutation(s: &SubspacePartition, rng: &mut Rng) -> SubspacePartition {
    let mut out = s.clone();
    for (i, sub) in s.subspaces.iter().enumerate() {
        for f in sub.iter() {
            let c = s.occurrences(f) as f64;
            if rng.random::<f64>() > 1.0 / c {
                out.subspaces[i].remove(f);
            }
        }
    }
    out
}

/// Offers every feature missing from all subspaces to each subspace,
/// accepting with probability `1 - 1/K`.
pub fn adding_mutation(s: &SubspacePartition, rng: &mut Rng) -> SubspacePartition {
    let k = s.k() as f64;
    let mut out = s.clone();
    for f in 0..s.num_features {
        if s.occurrences(f) == 0 {
            for sub in &mut out.subspaces {
                if rng.random::<f64>() > 1.0 / k {
                    sub.insert(f);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SubspaceOperators {
    pub mutation_probability: f64,
}

impl GeneticOperators<SubspacePartition> for SubspaceOperators {
    fn crossover(
        &self,
        a: &SubspacePartition,
        b: &SubspacePartition,
        rng: &mut Rng,
    ) -> (SubspacePartition, SubspacePartition) {
        let mut c1 = subspace_crossover(a, b, rng);
        let mut c2 = subspace_crossover(b, a, rng);
        repair(&mut c1, rng);
        repair(&mut c2, rng);
        (c1, c2)
    }

    fn mutate(&self, s: &SubspacePartition, rng: &mut Rng) -> SubspacePartition {
        let moved = if s.k() >= 2 {
            moving_mutation(s, self.mutation_probability, rng)
        } else {
            s.clone()
        };
        let mut out = adding_mutation(&vanishing_mutation(&moved, rng), rng);
        repair(&mut out, rng);
        out
    }
}

/// Small fixed autoencoder used to score partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    pub window_size: usize,
    /// Width of every proxy layer; defaults to the smallest allowed width.
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            window_size: 4,
            width: crate::nn::genome::MIN_CHANNELS,
            epochs: 2,
            batch_size: 32,
            learning_rate: 0.02,
        }
    }
}

impl ProxyConfig {
    pub fn genome(&self) -> ModelGenome {
        ModelGenome::uniform(
            LayerKind::FullyConnected,
            self.window_size,
            &[self.width; 3],
            1,
            self.learning_rate,
            Activation::Tanh,
        )
    }
}

/// Mean over subspaces of the proxy autoencoder's weighted train/validation
/// fitness. `train`/`val` are full-feature windows of the proxy length.
pub fn partition_fitness(
    s: &SubspacePartition,
    train: &WindowedDataset,
    val: &WindowedDataset,
    proxy: &ProxyConfig,
    seed: u64,
) -> Result<f64> {
    if s.subspaces.iter().any(Subspace::is_empty) {
        return Err(Error::Argument("partition must be repaired before scoring".into()));
    }
    let genome = proxy.genome();
    let scores = s
        .subspaces
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let t = train.project(g)?;
            let v = val.project(g)?;
            train_and_score(
                &genome,
                g,
                &t,
                &v,
                proxy.epochs,
                proxy.batch_size,
                derive_seed(seed, &[i as u64]),
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubspaceEvolutionConfig {
    pub k: usize,
    pub population_size: usize,
    pub generations: usize,
    pub mutation_probability: f64,
    pub crossover_probability: f64,
    pub reassign_probability: f64,
    pub proxy: ProxyConfig,
}

impl Default for SubspaceEvolutionConfig {
    fn default() -> Self {
        Self {
            k: 5,
            population_size: 16,
            generations: 10,
            mutation_probability: 0.1,
            crossover_probability: 0.1,
            reassign_probability: 0.2,
            proxy: ProxyConfig::default(),
        }
    }
}

impl SubspaceEvolutionConfig {
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
        if !(1..=5).contains(&self.k) {
            return Err(Error::Config(format!("K = {} outside [1, 5]", self.k)));
        }
        if !(0.0..=1.0).contains(&self.reassign_probability) {
            return Err(Error::Config("reassign probability outside [0, 1]".into()));
        }
        let p = &self.proxy;
        if p.window_size == 0 || p.width == 0 || p.epochs == 0 || p.batch_size == 0 {
            return Err(Error::Config(
                "proxy window, width, epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Evolves `K`-subspace partitions of the columns of `train_rows`, scoring
/// each with the proxy autoencoder on a chronological train/validation split.
pub fn evolve_subspaces(
    train_rows: &Matrix,
    cfg: &SubspaceEvolutionConfig,
    pool: &WorkerPool,
    seed: u64,
    on_generation: impl FnMut(&GenerationRecord),
) -> Result<EvolutionOutcome<SubspacePartition>> {
    cfg.validate()?;
    if cfg.k > train_rows.cols() {
        return Err(Error::Config(format!(
            "K = {} exceeds the {} available features",
            cfg.k,
            train_rows.cols()
        )));
    }
    let windows = make_windows(train_rows, None, cfg.proxy.window_size, 1)?;
    let (train, val) = split_train_val(&windows)?;
    let init = init_population_correlation(
        train_rows,
        cfg.k,
        cfg.population_size,
        cfg.reassign_probability,
        derive_seed(seed, &[0x1A17]),
    )?;
    let ops = SubspaceOperators {
        mutation_probability: cfg.mutation_probability,
    };
    let proxy = &cfg.proxy;
    evolve(
        init,
        &ops,
        |s: &SubspacePartition, seed| partition_fitness(s, &train, &val, proxy, seed),
        truncation_select,
        &cfg.evolution(seed),
        pool,
        "subspaces",
        on_generation,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(subs: &[&[usize]], m: usize) -> SubspacePartition {
        SubspacePartition::new(m, subs.iter().map(|s| s.iter().copied().collect()).collect()).unwrap()
    }

    #[test]
    fn crossover_traces() {
        let s = |v: &[usize]| v.iter().copied().collect::<Subspace>();
        assert!(crossover_subspace(&s(&[3]), &s(&[3]), 3).is_empty());
        assert_eq!(crossover_subspace(&s(&[0, 2, 4]), &s(&[1, 3, 5]), 3), s(&[0, 2, 5]));
        let p = s(&[2, 4, 6]);
        assert_eq!(crossover_subspace(&p, &p, 1), p);
    }

    #[test]
    fn crossover_children_come_from_parents() {
        let a = part(&[&[0, 1, 5], &[2, 3]], 8);
        let b = part(&[&[4, 6], &[1, 7]], 8);
        let mut rng = substream(1, &[]);
        for _ in 0..200 {
            let c = subspace_crossover(&a, &b, &mut rng);
            assert_eq!(c.k(), 2);
            for i in 0..2 {
                assert!(c.subspaces[i]
                    .iter()
                    .all(|f| a.subspaces[i].contains(f) || b.subspaces[i].contains(f)));
            }
        }
    }

    #[test]
    fn moving_mutation_cases() {
        let s = part(&[&[0], &[1]], 2);
        let mut rng = substream(2, &[]);
        assert_eq!(moving_mutation(&s, 0.0, &mut rng), s);
        let m = moving_mutation(&s, 1.0, &mut rng);
        assert_eq!(m, part(&[&[0, 1], &[0, 1]], 2));
        let big = part(&[&[0, 1, 2], &[3], &[4, 5]], 6);
        for _ in 0..100 {
            let m = moving_mutation(&big, 0.5, &mut rng);
            assert!(m.total_occurrences() >= big.total_occurrences());
        }
    }

    #[test]
    fn vanishing_never_removes_unique_features_and_never_grows() {
        let s = part(&[&[0, 1], &[1, 2], &[3]], 4);
        let mut rng = substream(3, &[]);
        for _ in 0..200 {
            let once = vanishing_mutation(&s, &mut rng);
            for f in [0, 2, 3] {
                assert_eq!(once.occurrences(f), 1);
            }
            let twice = vanishing_mutation(&once, &mut rng);
            for i in 0..3 {
                assert!(twice.subspaces[i].len() <= once.subspaces[i].len());
                assert!(once.subspaces[i].len() <= s.subspaces[i].len());
            }
        }
    }

    #[test]
    fn adding_mutation_guards() {
        let covered = part(&[&[0, 1], &[2]], 3);
        let mut rng = substream(4, &[]);
        assert_eq!(adding_mutation(&covered, &mut rng), covered);
        let single = part(&[&[0]], 3);
        for _ in 0..100 {
            assert_eq!(adding_mutation(&single, &mut rng), single);
        }
    }

    #[test]
    fn repair_fills_empty_subspaces() {
        let mut p = SubspacePartition {
            num_features: 4,
            subspaces: vec![Subspace::new(), [1].into_iter().collect()],
        };
        repair(&mut p, &mut substream(0, &[]));
        assert!(p.subspaces.iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn correlated_pair_clusters_together() {
        // features 0 and 2 are perfectly correlated; 1 and 3 unrelated
        let n = 200;
        let mut rows = Vec::new();
        let mut rng = substream(5, &[]);
        for t in 0..n {
            let x = (t as f64 * 0.1).sin();
            rows.push(vec![x, rng.random::<f64>(), 2.0 * x + 1.0, rng.random::<f64>()]);
        }
        let m = Matrix::from_rows(&rows).unwrap();
        let clusters = correlation_clusters(&m, 2).unwrap();
        assert!(clusters.iter().any(|c| c.contains(&0) && c.contains(&2)));
        let singletons = correlation_clusters(&m, 4).unwrap();
        assert_eq!(singletons, vec![vec![0], vec![1], vec![2], vec![3]]);
        assert!(correlation_clusters(&m, 5).is_err());
    }

    #[test]
    fn constant_feature_is_uncorrelated() {
        let m = Matrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let c = correlation_matrix(&m);
        assert_eq!(c[0][1], 0.0);
    }

    #[test]
    fn init_is_seeded() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|t| (0..6).map(|f| ((t * (f + 1)) as f64).sin()).collect())
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let a = init_population_correlation(&m, 3, 8, 0.2, 9).unwrap();
        let b = init_population_correlation(&m, 3, 8, 0.2, 9).unwrap();
        assert_eq!(a, b);
        assert!(a
            .iter()
            .all(|p| p.k() == 3 && p.subspaces.iter().all(|s| !s.is_empty())));
    }

    #[test]
    fn partition_json_round_trip() {
        let p = part(&[&[0, 3], &[1], &[2, 3, 4]], 5);
        let text = partition_to_json(&p).unwrap();
        assert_eq!(partition_from_json(&text).unwrap(), p);
        assert!(partition_from_json(&text.replace("\"num_features\": 5", "\"num_features\": 3")).is_err());
    }
}
