use rand::seq::SliceRandom;

use super::network::{backward, ModelWeights, TrainedModel, Workspace};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Mean squared residual over every entry of every window.
pub fn loss(model: &TrainedModel, windows: &WindowedDataset) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Argument("loss over an empty window set".into()));
    }
    check_windows(model, windows)?;
    let mut ws = model.workspace();
    let mut total = 0.0;
    for w in windows.windows() {
        let y = model.forward_with(w, &mut ws);
        total += w.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / (windows.len() * windows.window_size()) as f64)
}

fn check_windows(model: &TrainedModel, windows: &WindowedDataset) -> Result<()> {
    if windows.window_size() != model.input_len() {
        return Err(Error::Argument(format!(
            "windows of {}x{} do not fit a model expecting {}x{}",
            windows.window_len(),
            windows.num_features(),
            model.genome.window_size,
            model.subspace.len()
        )));
    }
    Ok(())
}

/// Loss and its gradient over the windows selected by `indices`,
/// accumulated into `grad` (which is overwritten).
fn batch_gradient(
    model: &TrainedModel,
    windows: &WindowedDataset,
    indices: &[usize],
    ws: &mut Workspace,
    d_out: &mut [f64],
    grad: &mut ModelWeights,
) -> f64 {
    grad.fill(0.0);
    let scale = 1.0 / (indices.len() * windows.window_size()) as f64;
    let mut total = 0.0;
    for &i in indices {
        let x = windows.window(i);
        let y = model.forward_with(x, ws);
        for ((d, &yi), &xi) in d_out.iter_mut().zip(y).zip(x) {
            let r = yi - xi;
            total += r * r;
            *d = 2.0 * r * scale;
        }
        backward(model.shapes(), &model.weights, model.genome.activation, d_out, ws, grad);
    }
    total * scale
}

/// Full-batch loss and gradient; used for gradient checks.
pub fn loss_and_gradient(model: &TrainedModel, windows: &WindowedDataset) -> Result<(f64, ModelWeights)> {
    if windows.is_empty() {
        return Err(Error::Argument("gradient over an empty window set".into()));
    }
    check_windows(model, windows)?;
    let mut ws = model.workspace();
    let mut d_out = vec![0.0; model.input_len()];
    let mut grad = ModelWeights::zeros(model.shapes());
    let indices: Vec<usize> = (0..windows.len()).collect();
    let l = batch_gradient(model, windows, &indices, &mut ws, &mut d_out, &mut grad);
    Ok((l, grad))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss observed during each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD on the mean squared reconstruction error, using the
/// genome's learning rate. Batch order is reshuffled from `rng` every epoch.
pub fn train(
    model: &mut TrainedModel,
    windows: &WindowedDataset,
    epochs: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<TrainReport> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let mut report = TrainReport::default();
    if epochs == 0 {
        return Ok(report);
    }
    if windows.is_empty() {
        return Err(Error::Argument("training on an empty window set".into()));
    }
    check_windows(model, windows)?;
    let lr = model.genome.learning_rate;
    let mut ws = model.workspace();
    let mut d_out = vec![0.0; model.input_len()];
    let mut grad = ModelWeights::zeros(model.shapes());
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut last_finite = f64::NAN;
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let l = batch_gradient(model, windows, batch, &mut ws, &mut d_out, &mut grad);
            if !l.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    last_finite_loss: last_finite,
                });
            }
            epoch_loss += l * batch.len() as f64;
            for (w, g) in model.weights.params_mut().zip(grad.params()) {
                *w -= lr * g;
            }
        }
        let epoch_loss = epoch_loss / windows.len() as f64;
        if !epoch_loss.is_finite() || !model.weights.is_finite() {
            return Err(Error::Divergence {
                epoch,
                last_finite_loss: last_finite,
            });
        }
        last_finite = epoch_loss;
        report.epoch_losses.push(epoch_loss);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, Matrix};
    use crate::nn::genome::{Activation, LayerKind, ModelGenome};
    use crate::rng::substream;
    use crate::subspace::Subspace;

    fn windows(rows: usize, m: usize, lw: usize, f: impl Fn(usize, usize) -> f64) -> WindowedDataset {
        let data = (0..rows * m).map(|i| f(i / m, i % m)).collect();
        make_windows(&Matrix::new(rows, m, data).unwrap(), None, lw, 1).unwrap()
    }

    fn model(kind: LayerKind, lw: usize, m: usize, lr: f64, seed: u64) -> TrainedModel {
        let g = ModelGenome::uniform(kind, lw, &[16, 16, 16], 3.min(m), lr, Activation::Tanh);
        TrainedModel::init(g, Subspace::from_iter(0..m), &mut substream(seed, &[])).unwrap()
    }

    #[test]
    fn loss_examples() {
        let w = windows(1, 1, 1, |_, _| 2.0);
        let mut m = model(LayerKind::FullyConnected, 1, 1, 0.01, 0);
        m.weights.fill(0.0);
        assert_eq!(loss(&m, &w).unwrap(), 4.0);
        let empty = windows(1, 1, 2, |_, _| 0.0);
        assert!(loss(&m, &empty).is_err());
    }

    #[test]
    fn loss_of_union_is_mean_of_equal_halves() {
        let m = model(LayerKind::Conv1d, 2, 3, 0.01, 1);
        let all = windows(21, 3, 2, |t, f| ((t * 3 + f) as f64 * 0.37).sin());
        let a = all.slice(0, 10);
        let b = all.slice(10, 20);
        let both = all.slice(0, 20);
        let lhs = loss(&m, &both).unwrap();
        let rhs = 0.5 * (loss(&m, &a).unwrap() + loss(&m, &b).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let w = windows(20, 2, 2, |t, _| t as f64 / 20.0);
        let mut m = model(LayerKind::FullyConnected, 2, 2, 0.05, 3);
        let before = m.weights.clone();
        train(&mut m, &w, 0, 4, &mut substream(0, &[])).unwrap();
        assert_eq!(m.weights, before);
    }

    #[test]
    fn training_on_zeros_does_not_increase_loss() {
        let w = windows(64, 2, 3, |_, _| 0.0);
        for kind in [LayerKind::FullyConnected, LayerKind::Conv1d] {
            let mut m = model(kind, 3, 2, 0.05, 5);
            for layer in &mut m.weights.layers {
                layer.bias.iter_mut().for_each(|b| *b = 0.1);
            }
            let mut rng = substream(9, &[]);
            let mut losses = vec![loss(&m, &w).unwrap()];
            for _ in 0..15 {
                train(&mut m, &w, 1, 8, &mut rng).unwrap();
                losses.push(loss(&m, &w).unwrap());
            }
            for pair in losses.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-9, "{kind:?}: {losses:?}");
            }
            assert!(losses.last().unwrap() < &losses[0]);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let w = windows(32, 2, 2, |t, f| (t * 7 + f) as f64);
        let mut g = ModelGenome::uniform(LayerKind::FullyConnected, 2, &[16, 16, 16], 1, 0.1, Activation::Relu);
        g.learning_rate = 0.1;
        let mut m = TrainedModel::init(g, Subspace::from_iter(0..2), &mut substream(1, &[])).unwrap();
        match train(&mut m, &w, 50, 4, &mut substream(2, &[])) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let w = windows(40, 3, 4, |t, f| ((t + f) as f64 * 0.2).cos());
        let run = || {
            let mut m = model(LayerKind::Conv1d, 4, 3, 0.02, 11);
            train(&mut m, &w, 3, 8, &mut substream(4, &[])).unwrap();
            m.weights
        };
        assert_eq!(run(), run());
    }
}
