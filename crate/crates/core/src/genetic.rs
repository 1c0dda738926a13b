//! Level-agnostic genetic loop shared by subspace and model evolution.
//!
//! One generation: parents are paired at random without replacement, each
//! pair is crossed over with the crossover probability (otherwise copied),
//! every offspring is mutated with the mutation probability, changed
//! offspring are scored, and the selection hook picks the next population
//! from parents and offspring together.
//!
//! Operator draws come from a single coordinator stream. Each fitness call
//! receives its own seed keyed by `(generation, index)`, so evaluations can
//! run on any number of workers with identical results.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::WorkerPool;
use crate::rng::{derive_seed, substream, tags, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_probability: f64,
    pub crossover_probability: f64,
    #[serde(default)]
    pub seed: u64,
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("population size must be at least 2".into()));
        }
        if self.generations < 1 {
            return Err(Error::Config("at least one generation is required".into()));
        }
        for (name, p) in [
            ("mutation probability", self.mutation_probability),
            ("crossover probability", self.crossover_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored<S> {
    pub solution: S,
    pub fitness: f64,
}

pub trait GeneticOperators<S> {
    fn crossover(&self, a: &S, b: &S, rng: &mut Rng) -> (S, S);
    fn mutate(&self, s: &S, rng: &mut Rng) -> S;
}

/// One line of the convergence log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub level: String,
    pub generation: usize,
    /// `None` when no individual has finite fitness.
    pub best_fitness: Option<f64>,
    pub mean_fitness: Option<f64>,
    pub wall_seconds: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct EvolutionOutcome<S> {
    pub population: Vec<Scored<S>>,
    pub history: Vec<GenerationRecord>,
}

impl<S> EvolutionOutcome<S> {
    /// Highest-fitness individual; earliest wins ties.
    pub fn best(&self) -> &Scored<S> {
        best_of(&self.population).expect("population is never empty")
    }
}

pub fn best_of<S>(pop: &[Scored<S>]) -> Option<&Scored<S>> {
    pop.iter().reduce(|best, s| {
        if s.fitness.total_cmp(&best.fitness).is_gt() {
            s
        } else {
            best
        }
    })
}

/// Keeps the `n` fittest; stable, so earlier individuals win ties.
pub fn truncation_select<S>(mut pool: Vec<Scored<S>>, n: usize) -> Vec<Scored<S>> {
    pool.sort_by(|a, b| b.fitness.total_cmp(&a.fitness));
    pool.truncate(n);
    pool
}

fn summarize<S>(
    level: &str,
    generation: usize,
    pop: &[Scored<S>],
    started: Instant,
    evaluations: usize,
) -> GenerationRecord {
    let finite: Vec<f64> = pop.iter().map(|s| s.fitness).filter(|f| f.is_finite()).collect();
    GenerationRecord {
        level: level.to_owned(),
        generation,
        best_fitness: finite.iter().copied().reduce(f64::max),
        mean_fitness: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        wall_seconds: started.elapsed().as_secs_f64(),
        evaluations,
    }
}

fn evaluate_all<S, F>(pool: &WorkerPool, items: &[S], generation: usize, seed: u64, fitness: &F) -> Result<Vec<f64>>
where
    S: Sync,
    F: Fn(&S, u64) -> Result<f64> + Sync + Send,
{
    let results = pool.map(items, |i, s| {
        fitness(s, derive_seed(seed, &[generation as u64, i as u64]))
    });
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let f = r.map_err(|e| Error::Evolution {
                generation,
                individual: i,
                source: Box::new(e),
            })?;
            if f.is_nan() {
                return Err(Error::Evolution {
                    generation,
                    individual: i,
                    source: Box::new(Error::Argument("fitness is NaN".into())),
                });
            }
            Ok(f)
        })
        .collect()
}

/// Runs the loop for `cfg.generations` generations. Generation 0 in the
/// history is the scored initial population.
#[allow(clippy::too_many_arguments)]
pub fn evolve<S, O, F, Sel>(
    init: Vec<S>,
    ops: &O,
    fitness: F,
    select: Sel,
    cfg: &EvolutionConfig,
    pool: &WorkerPool,
    level: &str,
    mut on_generation: impl FnMut(&GenerationRecord),
) -> Result<EvolutionOutcome<S>>
where
    S: Clone + PartialEq + Send + Sync,
    O: GeneticOperators<S>,
    F: Fn(&S, u64) -> Result<f64> + Sync + Send,
    Sel: Fn(Vec<Scored<S>>, usize) -> Vec<Scored<S>>,
{
    cfg.validate()?;
    let n = cfg.population_size;
    if init.len() != n {
        return Err(Error::Argument(format!(
            "initial population has {} individuals, expected {n}",
            init.len()
        )));
    }
    let started = Instant::now();
    let mut rng = substream(cfg.seed, &[tags::LOOP]);

    let scores = evaluate_all(pool, &init, 0, cfg.seed, &fitness)?;
    let mut population: Vec<Scored<S>> = init
        .into_iter()
        .zip(scores)
        .map(|(solution, fitness)| Scored { solution, fitness })
        .collect();
    let mut history = vec![summarize(level, 0, &population, started, n)];
    on_generation(&history[0]);

    for generation in 1..=cfg.generations {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut offspring: Vec<(S, bool)> = Vec::with_capacity(n);
        for pair in order.chunks(2) {
            match *pair {
                [a, b] if rng.random_bool(cfg.crossover_probability) => {
                    let (c1, c2) = ops.crossover(&population[a].solution, &population[b].solution, &mut rng);
                    offspring.push((c1, true));
                    offspring.push((c2, true));
                }
                _ => offspring.extend(pair.iter().map(|&i| (population[i].solution.clone(), false))),
            }
        }
        for (child, changed) in &mut offspring {
            if rng.random_bool(cfg.mutation_probability) {
                *child = ops.mutate(child, &mut rng);
                *changed = true;
            }
        }

        // Score only genuinely new individuals, once each.
        let mut fresh: Vec<S> = Vec::new();
        for (child, changed) in offspring {
            if changed && !population.iter().any(|p| p.solution == child) && !fresh.contains(&child) {
                fresh.push(child);
            }
        }
        let scores = evaluate_all(pool, &fresh, generation, cfg.seed, &fitness)?;
        let evaluations = fresh.len();
        let mut candidates = population;
        candidates.extend(
            fresh
                .into_iter()
                .zip(scores)
                .map(|(solution, fitness)| Scored { solution, fitness }),
        );
        population = select(candidates, n);
        if population.len() != n {
            return Err(Error::Evolution {
                generation,
                individual: population.len(),
                source: Box::new(Error::Argument(format!(
                    "selection returned {} individuals, expected {n}",
                    population.len()
                ))),
            });
        }
        let record = summarize(level, generation, &population, started, evaluations);
        on_generation(&record);
        history.push(record);
    }
    Ok(EvolutionOutcome { population, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bit strings with one-point crossover and single-bit flips.
    struct BitOps;

    impl GeneticOperators<Vec<bool>> for BitOps {
        fn crossover(&self, a: &Vec<bool>, b: &Vec<bool>, rng: &mut Rng) -> (Vec<bool>, Vec<bool>) {
            let cut = rng.random_range(1..a.len());
            let c1 = a[..cut].iter().chain(&b[cut..]).copied().collect();
            let c2 = b[..cut].iter().chain(&a[cut..]).copied().collect();
            (c1, c2)
        }

        fn mutate(&self, s: &Vec<bool>, rng: &mut Rng) -> Vec<bool> {
            let mut s = s.clone();
            let i = rng.random_range(0..s.len());
            s[i] = !s[i];
            s
        }
    }

    struct Identity;

    impl GeneticOperators<u32> for Identity {
        fn crossover(&self, a: &u32, b: &u32, _: &mut Rng) -> (u32, u32) {
            (*a, *b)
        }
        fn mutate(&self, s: &u32, _: &mut Rng) -> u32 {
            *s
        }
    }

    fn cfg(n: usize, g: usize, pm: f64, pc: f64, seed: u64) -> EvolutionConfig {
        EvolutionConfig {
            population_size: n,
            generations: g,
            mutation_probability: pm,
            crossover_probability: pc,
            seed,
        }
    }

    fn one_max(seed: u64, workers: usize) -> EvolutionOutcome<Vec<bool>> {
        let mut rng = substream(seed, &[99]);
        let init: Vec<Vec<bool>> = (0..16)
            .map(|_| (0..20).map(|_| rng.random_bool(0.5)).collect())
            .collect();
        let pool = WorkerPool::new(workers).unwrap();
        evolve(
            init,
            &BitOps,
            |s: &Vec<bool>, _| Ok(s.iter().filter(|&&b| b).count() as f64),
            truncation_select,
            &cfg(16, 30, 0.1, 0.9, seed),
            &pool,
            "onemax",
            |_| {},
        )
        .unwrap()
    }

    #[test]
    fn identity_operators_rescore_input() {
        let pool = WorkerPool::new(1).unwrap();
        let init: Vec<u32> = vec![5, 3, 9, 1];
        let out = evolve(
            init.clone(),
            &Identity,
            |s: &u32, _| Ok(f64::from(*s)),
            truncation_select,
            &cfg(4, 1, 1.0, 1.0, 0),
            &pool,
            "id",
            |_| {},
        )
        .unwrap();
        let mut got: Vec<u32> = out.population.iter().map(|s| s.solution).collect();
        got.sort_unstable();
        assert_eq!(got, vec![1, 3, 5, 9]);
        assert!(out.population.iter().all(|s| s.fitness == f64::from(s.solution)));
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.history[1].evaluations, 0);
    }

    #[test]
    fn one_max_reaches_optimum() {
        let out = one_max(3, 1);
        assert_eq!(out.best().fitness, 20.0);
    }

    #[test]
    fn elitist_history_is_monotone_and_size_constant() {
        let out = one_max(11, 2);
        for pair in out.history.windows(2) {
            assert!(pair[1].best_fitness >= pair[0].best_fitness);
        }
        assert_eq!(out.population.len(), 16);
        assert!(out.history.iter().skip(1).all(|h| h.evaluations <= 16));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let a = one_max(5, 1);
        let b = one_max(5, 3);
        assert_eq!(a.population, b.population);
        let strip = |h: &[GenerationRecord]| h.iter().map(|r| (r.best_fitness, r.mean_fitness)).collect::<Vec<_>>();
        assert_eq!(strip(&a.history), strip(&b.history));
    }

    #[test]
    fn hook_failure_names_generation_and_individual() {
        let pool = WorkerPool::new(1).unwrap();
        let err = evolve(
            vec![1u32, 2, 3, 4],
            &Identity,
            |s: &u32, _| {
                if *s == 3 {
                    Err(Error::Data("boom".into()))
                } else {
                    Ok(0.0)
                }
            },
            truncation_select,
            &cfg(4, 1, 0.0, 0.0, 0),
            &pool,
            "x",
            |_| {},
        )
        .unwrap_err();
        match err {
            Error::Evolution {
                generation, individual, ..
            } => assert_eq!((generation, individual), (0, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(cfg(1, 1, 0.1, 0.1, 0).validate().is_err());
        assert!(cfg(2, 0, 0.1, 0.1, 0).validate().is_err());
        assert!(cfg(2, 1, 1.1, 0.1, 0).validate().is_err());
    }
}
