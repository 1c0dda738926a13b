//! Gradient-free weight refinement that drives down the number of training
//! windows whose reconstruction error is unusually large.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::nn::{ModelWeights, TrainedModel};
use crate::pool::WorkerPool;
use crate::rng::{substream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_probability: f64,
    /// Relative step factor τ.
    pub mutation_power: f64,
    /// Windows with error above `deviation_factor * mean` are false positives.
    pub deviation_factor: f64,
    pub stagnation_window: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            population_size: 24,
            generations: 64,
            mutation_probability: 0.02,
            mutation_power: 1.0 / 256.0,
            deviation_factor: 2.0,
            stagnation_window: 5,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 {
            return Err(Error::Config("fine-tuning population must be non-empty".into()));
        }
        if !(self.mutation_probability > 0.0 && self.mutation_probability < 1.0) {
            return Err(Error::Config(format!(
                "fine-tuning mutation probability {} outside (0, 1)",
                self.mutation_probability
            )));
        }
        if !(self.mutation_power > 0.0 && self.mutation_power.is_finite()) {
            return Err(Error::Config("mutation power must be positive".into()));
        }
        if !(self.deviation_factor > 0.0 && self.deviation_factor.is_finite()) {
            return Err(Error::Config("deviation factor must be positive".into()));
        }
        if self.stagnation_window == 0 {
            return Err(Error::Config("stagnation window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Scales each parameter, independently selected with probability `p_m`, by
/// `1 + p_m*tau` or `1 - p_m*tau` with equal odds.
pub fn mutate_weights(w: &ModelWeights, p_m: f64, tau: f64, rng: &mut Rng) -> ModelWeights {
    let mut out = w.clone();
    let step = p_m * tau;
    for theta in out.params_mut() {
        if rng.random_bool(p_m) {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            *theta *= 1.0 + sign * step;
        }
    }
    out
}

/// Number of errors strictly above `c` times their mean.
pub fn false_positives(errors: &[f64], c: f64) -> usize {
    if errors.is_empty() {
        return 0;
    }
    let threshold = c * errors.iter().sum::<f64>() / errors.len() as f64;
    errors.iter().filter(|&&e| e > threshold).count()
}

pub fn count_false_positives(model: &TrainedModel, windows: &WindowedDataset, c: f64) -> Result<usize> {
    if windows.is_empty() {
        return Err(Error::Argument("false positives over an empty window set".into()));
    }
    Ok(false_positives(&model.reconstruction_errors(windows.windows())?, c))
}

/// Sum over layers of the Euclidean norm of the parameter difference.
pub fn weight_distance(a: &TrainedModel, b: &TrainedModel) -> Result<f64> {
    if a.genome != b.genome || a.subspace.len() != b.subspace.len() {
        return Err(Error::Argument(
            "weight distance needs models of the same genome".into(),
        ));
    }
    Ok(a.weights
        .layers
        .iter()
        .zip(&b.weights.layers)
        .map(|(la, lb)| {
            la.params()
                .zip(lb.params())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .sum())
}

/// A model moved into the retained set.
#[derive(Debug, Clone, PartialEq)]
pub struct Retained {
    pub model: TrainedModel,
    pub false_positives: usize,
    /// 1-based generation at which it was retained; 0 when it is the final
    /// anchor added because nothing converged.
    pub generation: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneRecord {
    pub generation: usize,
    pub best_fp: usize,
    pub re_anchored: bool,
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub retained: Vec<Retained>,
    pub history: Vec<FineTuneRecord>,
    pub initial_fp: usize,
    /// First generation (1-based) at which the anchor converged.
    pub first_convergence: Option<usize>,
}

impl FineTuneOutcome {
    /// Lowest false-positive count, the latest among ties.
    pub fn best(&self) -> &Retained {
        self.retained
            .iter()
            .rev()
            .min_by_key(|r| r.false_positives)
            .expect("fine-tuning always retains a model")
    }
}

/// Evolves the weights of `best` without gradients. Mutants of generation
/// `g` draw from sub-stream `[g, i]` of `seed`, so results are independent
/// of the pool size.
pub fn fine_tune(
    best: &TrainedModel,
    windows: &WindowedDataset,
    cfg: &FineTuneConfig,
    pool: &WorkerPool,
    seed: u64,
    mut on_generation: impl FnMut(&FineTuneRecord),
) -> Result<FineTuneOutcome> {
    cfg.validate()?;
    let c = cfg.deviation_factor;
    let initial_fp = count_false_positives(best, windows, c)?;
    let mut anchor = (best.clone(), initial_fp);
    let mut fp_history: Vec<usize> = Vec::new();
    let mut retained = Vec::new();
    let mut history = Vec::with_capacity(cfg.generations);
    let mut first_convergence = None;
    let ids: Vec<usize> = (0..cfg.population_size).collect();

    for generation in 1..=cfg.generations {
        let parent = &anchor.0;
        let population = pool
            .map(&ids, |_, &i| {
                let mut rng = substream(seed, &[generation as u64, i as u64]);
                let mut weights =
                    mutate_weights(&parent.weights, cfg.mutation_probability, cfg.mutation_power, &mut rng);
                weights.round_to_f32();
                let model = TrainedModel::new(parent.genome.clone(), weights, parent.subspace.clone())?;
                let fp = count_false_positives(&model, windows, c)?;
                Ok((model, fp))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let winner = population
            .iter()
            .enumerate()
            .min_by_key(|(i, (_, fp))| (*fp, *i))
            .map(|(i, (_, fp))| (i, *fp))
            .expect("population is non-empty");
        // The anchor competes after every mutant, so it only survives when
        // strictly better.
        if winner.1 <= anchor.1 {
            anchor = population[winner.0].clone();
        }

        let fp = anchor.1;
        let stagnated = fp_history.len() >= cfg.stagnation_window
            && fp_history[fp_history.len() - cfg.stagnation_window..]
                .iter()
                .all(|&f| f == fp);
        fp_history.push(fp);
        let re_anchored = fp == 0 || stagnated;
        if re_anchored {
            first_convergence.get_or_insert(generation);
            let mut far = None;
            for (m, mfp) in &population {
                let d = weight_distance(&anchor.0, m)?;
                if far.as_ref().is_none_or(|(bd, _): &(f64, _)| d > *bd) {
                    far = Some((d, (m.clone(), *mfp)));
                }
            }
            let (_, next) = far.expect("population is non-empty");
            retained.push(Retained {
                model: std::mem::replace(&mut anchor, next).0,
                false_positives: fp,
                generation,
            });
            fp_history.clear();
        }
        let record = FineTuneRecord {
            generation,
            best_fp: fp,
            re_anchored,
        };
        on_generation(&record);
        history.push(record);
    }
    if retained.is_empty() {
        retained.push(Retained {
            model: anchor.0,
            false_positives: anchor.1,
            generation: 0,
        });
    }
    Ok(FineTuneOutcome {
        retained,
        history,
        initial_fp,
        first_convergence,
    })
}
