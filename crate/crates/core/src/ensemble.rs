//! Thresholded subspace models combined by any-vote, plus point-wise
//! scoring and on-disk manifests.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_windows, project_subspace, Matrix, WindowedDataset};
use crate::error::{Error, Result};
use crate::nn::genome::{genome_from_json, genome_to_json};
use crate::nn::io::{load_weights, save_weights};
use crate::nn::TrainedModel;
use crate::subspace::{Subspace, SubspacePartition};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("percentile of an empty set".into()));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Argument(format!("percentile {percentile} outside (0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn calibrate_threshold(model: &TrainedModel, val_windows: &WindowedDataset, percentile: f64) -> Result<f64> {
    if val_windows.is_empty() {
        return Err(Error::Argument("threshold calibration needs validation windows".into()));
    }
    nearest_rank(&model.reconstruction_errors(val_windows.windows())?, percentile)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedModel {
    pub model: TrainedModel,
    pub threshold: f64,
}

/// 1 when the reconstruction error of a subspace window reaches the threshold.
pub fn classify_point(tm: &ThresholdedModel, window: &[f64]) -> Result<u8> {
    Ok(u8::from(tm.model.reconstruction_error(window)? >= tm.threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub num_features: usize,
    pub members: Vec<ThresholdedModel>,
}

impl EnsembleModel {
    pub fn new(num_features: usize, members: Vec<ThresholdedModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Argument("an ensemble needs at least one member".into()));
        }
        for m in &members {
            if m.model.subspace.is_empty() || m.model.subspace.last().is_some_and(|f| f >= num_features) {
                return Err(Error::Argument("member subspace outside the feature range".into()));
            }
            if !m.threshold.is_finite() || m.threshold < 0.0 {
                return Err(Error::Argument(format!("invalid threshold {}", m.threshold)));
            }
        }
        Ok(Self { num_features, members })
    }

    pub fn partition(&self) -> SubspacePartition {
        SubspacePartition {
            num_features: self.num_features,
            subspaces: self.members.iter().map(|m| m.model.subspace.clone()).collect(),
        }
    }

    /// Longest member window.
    pub fn window_len(&self) -> usize {
        self.members
            .iter()
            .map(|m| m.model.genome.window_size)
            .max()
            .unwrap_or(1)
    }
}

/// Per-member votes for a full-feature window of at least
/// [`EnsembleModel::window_len`] steps; each member reads the trailing steps
/// it needs.
pub fn member_votes(e: &EnsembleModel, window: &[f64]) -> Result<Vec<u8>> {
    let m = e.num_features;
    if !window.len().is_multiple_of(m) || window.len() / m < e.window_len() {
        return Err(Error::Argument(format!(
            "ensemble needs a window of {} steps over {m} features",
            e.window_len()
        )));
    }
    let steps = window.len() / m;
    e.members
        .iter()
        .map(|tm| {
            let lw = tm.model.genome.window_size;
            let tail = &window[(steps - lw) * m..];
            classify_point(tm, &project_subspace(tail, m, &tm.model.subspace)?)
        })
        .collect()
}

/// Any-vote: 1 iff at least one member fires.
pub fn ensemble_predict(e: &EnsembleModel, window: &[f64]) -> Result<u8> {
    Ok(u8::from(member_votes(e, window)?.contains(&1)))
}

/// Flags of one member over every point of `values`. The window ending at
/// `t` decides point `t`; the first `l_w - 1` points are never flagged.
pub fn member_point_flags(tm: &ThresholdedModel, values: &Matrix) -> Result<Vec<u8>> {
    let cols: Subspace = tm.model.subspace.clone();
    let lw = tm.model.genome.window_size;
    let mut flags = vec![0u8; values.rows()];
    if values.rows() < lw {
        return Ok(flags);
    }
    let windows = make_windows(values, None, lw, 1)?.project(&cols)?;
    let errors = tm.model.reconstruction_errors(windows.windows())?;
    for (i, err) in errors.into_iter().enumerate() {
        flags[i + lw - 1] = u8::from(err >= tm.threshold);
    }
    Ok(flags)
}

/// Point-wise ensemble predictions over a whole series.
pub fn predict_series(e: &EnsembleModel, values: &Matrix) -> Result<Vec<u8>> {
    if values.cols() != e.num_features {
        return Err(Error::Argument(format!(
            "series has {} features, ensemble expects {}",
            values.cols(),
            e.num_features
        )));
    }
    let per_member = e
        .members
        .par_iter()
        .map(|tm| member_point_flags(tm, values))
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![0u8; values.rows()];
    for flags in per_member {
        for (o, f) in out.iter_mut().zip(flags) {
            *o |= f;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Point-wise precision, recall and F1; zero denominators give 0.
pub fn evaluate_f1(predictions: &[u8], labels: &[u8]) -> Result<EvaluationReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvaluationReport {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        tn,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub subspace: Vec<usize>,
    pub genome: String,
    pub weights: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub schema_version: u32,
    pub num_features: usize,
    pub members: Vec<MemberEntry>,
}

/// Writes `ensemble.json` plus one genome and one weights file per member
/// into `dir`, and returns the manifest path.
pub fn save_ensemble(e: &EnsembleModel, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
    let mut members = Vec::with_capacity(e.members.len());
    for (i, tm) in e.members.iter().enumerate() {
        let genome = format!("member_{i}.genome.json");
        let weights = format!("member_{i}.weights.bin");
        let path = dir.join(&genome);
        fs::write(&path, genome_to_json(&tm.model.genome)?).map_err(|err| Error::io(&path, err))?;
        save_weights(&tm.model.weights, dir.join(&weights))?;
        members.push(MemberEntry {
            subspace: tm.model.subspace.iter().collect(),
            genome,
            weights,
            threshold: tm.threshold,
        });
    }
    let manifest = EnsembleManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        num_features: e.num_features,
        members,
    };
    let path = dir.join("ensemble.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|err| Error::io(&path, err))?;
    Ok(path)
}

/// Loads an ensemble from its manifest; member files resolve relative to it.
pub fn load_ensemble(manifest_path: impl AsRef<Path>) -> Result<EnsembleModel> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|err| Error::io(path, err))?;
    let manifest: EnsembleManifest = serde_json::from_str(&text)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported ensemble manifest version {}",
            manifest.schema_version
        )));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let members = manifest
        .members
        .iter()
        .map(|m| {
            let gpath = dir.join(&m.genome);
            let genome = genome_from_json(&fs::read_to_string(&gpath).map_err(|err| Error::io(&gpath, err))?)?;
            let weights = load_weights(dir.join(&m.weights))?;
            let model = TrainedModel::new(genome, weights, m.subspace.iter().copied().collect())?;
            Ok(ThresholdedModel {
                model,
                threshold: m.threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleModel::new(manifest.num_features, members)
}
