//! Autoencoder execution: parameter layout, forward and backward passes.
//!
//! A window of `l_w` steps over `w` features is a flat row-major vector.
//! Conv1d layers read it as `l_w` channels over a spatial axis of length
//! `w` ("same" padding, stride 1), so every activation is `channels x w`.
//! Fully connected layers read the whole flattened window; their hidden
//! activations are `out_channels` wide and the last decoder layer writes
//! `l_w * w` values back.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::genome::{Activation, LayerKind, ModelGenome};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::subspace::Subspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Dense {
        n_in: usize,
        n_out: usize,
    },
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        len: usize,
    },
}

impl LayerShape {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerShape::Dense { n_in, .. } => n_in,
            LayerShape::Conv { c_in, len, .. } => c_in * len,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            LayerShape::Dense { n_out, .. } => n_out,
            LayerShape::Conv { c_out, len, .. } => c_out * len,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerShape::Dense { n_in, n_out } => vec![n_out, n_in],
            LayerShape::Conv {
                c_in, c_out, kernel, ..
            } => vec![c_out, c_in, kernel],
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerShape::Dense { n_out, .. } => n_out,
            LayerShape::Conv { c_out, .. } => c_out,
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerShape::Dense { n_in, n_out } => (n_in, n_out),
            LayerShape::Conv {
                c_in, c_out, kernel, ..
            } => (c_in * kernel, c_out * kernel),
        }
    }
}

/// Encoder followed by decoder layer shapes for a genome applied to a
/// subspace of `width` features.
pub fn layer_shapes(genome: &ModelGenome, width: usize) -> Vec<LayerShape> {
    let enc = &genome.encoder_layers;
    let n = enc.len();
    // Flattened size at encoder boundary i (0 = input).
    let boundary = |i: usize| -> usize {
        match genome.layer_kind() {
            LayerKind::Conv1d => {
                if i == 0 {
                    genome.window_size
                } else {
                    enc[i - 1].out_channels
                }
            }
            LayerKind::FullyConnected => {
                if i == 0 {
                    genome.window_size * width
                } else {
                    enc[i - 1].out_channels
                }
            }
        }
    };
    let make = |a: usize, b: usize, kernel: usize| match genome.layer_kind() {
        LayerKind::Conv1d => LayerShape::Conv {
            c_in: boundary(a),
            c_out: boundary(b),
            kernel,
            len: width,
        },
        LayerKind::FullyConnected => LayerShape::Dense {
            n_in: boundary(a),
            n_out: boundary(b),
        },
    };
    let mut shapes = Vec::with_capacity(2 * n);
    for (i, l) in enc.iter().enumerate() {
        shapes.push(make(i, i + 1, l.kernel_size));
    }
    for (j, l) in enc.iter().enumerate().rev() {
        shapes.push(make(j + 1, j, l.kernel_size));
    }
    shapes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub shape: Vec<usize>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerWeights {
    pub fn zeros(shape: &LayerShape) -> Self {
        let ws = shape.weight_shape();
        Self {
            weight: vec![0.0; ws.iter().product()],
            bias: vec![0.0; shape.bias_len()],
            shape: ws,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// All encoder and decoder parameters, one entry per layer in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub layers: Vec<LayerWeights>,
}

impl ModelWeights {
    pub fn zeros(shapes: &[LayerShape]) -> Self {
        Self {
            layers: shapes.iter().map(LayerWeights::zeros).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerWeights::num_params).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(LayerWeights::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(LayerWeights::params_mut)
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.params_mut().for_each(|v| *v = value);
    }

    /// Snaps every parameter to the nearest `f32`, the persisted precision.
    pub fn round_to_f32(&mut self) {
        self.params_mut().for_each(|v| *v = f64::from(*v as f32));
    }

    pub fn matches(&self, shapes: &[LayerShape]) -> bool {
        self.layers.len() == shapes.len()
            && self.layers.iter().zip(shapes).all(|(l, s)| {
                l.shape == s.weight_shape()
                    && l.weight.len() == l.shape.iter().product::<usize>()
                    && l.bias.len() == s.bias_len()
            })
    }
}

/// Fan-based uniform initialisation, zero biases.
pub fn instantiate(genome: &ModelGenome, width: usize, rng: &mut Rng) -> ModelWeights {
    let shapes = layer_shapes(genome, width);
    let mut weights = ModelWeights::zeros(&shapes);
    for (layer, shape) in weights.layers.iter_mut().zip(&shapes) {
        let (fan_in, fan_out) = shape.fans();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut layer.weight {
            *w = rng.random_range(-bound..bound);
        }
    }
    weights
}

/// A genome with concrete weights, bound to the subspace it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub genome: ModelGenome,
    pub weights: ModelWeights,
    pub subspace: Subspace,
    shapes: Vec<LayerShape>,
}

impl TrainedModel {
    pub fn new(genome: ModelGenome, weights: ModelWeights, subspace: Subspace) -> Result<Self> {
        genome.validate_for_width(subspace.len())?;
        let shapes = layer_shapes(&genome, subspace.len());
        if !weights.matches(&shapes) {
            return Err(Error::Argument("weights do not match the genome's layer shapes".into()));
        }
        Ok(Self {
            genome,
            weights,
            subspace,
            shapes,
        })
    }

    /// Freshly initialised model.
    pub fn init(genome: ModelGenome, subspace: Subspace, rng: &mut Rng) -> Result<Self> {
        genome.validate_for_width(subspace.len())?;
        let weights = instantiate(&genome, subspace.len(), rng);
        Self::new(genome, weights, subspace)
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    /// Flattened window length this model consumes.
    pub fn input_len(&self) -> usize {
        self.genome.window_size * self.subspace.len()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(&self.shapes)
    }

    fn check_input(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.input_len() {
            return Err(Error::Argument(format!(
                "window has {} values, model expects {} ({} steps x {} features)",
                window.len(),
                self.input_len(),
                self.genome.window_size,
                self.subspace.len()
            )));
        }
        Ok(())
    }

    /// Reconstruction `D(E(x))`.
    pub fn forward(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.check_input(window)?;
        let mut ws = self.workspace();
        Ok(self.forward_with(window, &mut ws).to_vec())
    }

    /// Forward pass reusing `ws`; the input length is not re-checked.
    pub fn forward_with<'w>(&self, window: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        forward(&self.shapes, &self.weights, self.genome.activation, window, ws)
    }

    /// L2 norm of the residual over all entries of the window.
    pub fn reconstruction_error(&self, window: &[f64]) -> Result<f64> {
        self.check_input(window)?;
        let mut ws = self.workspace();
        Ok(residual_norm(window, self.forward_with(window, &mut ws)))
    }

    /// Reconstruction errors for a batch of windows of this model's shape.
    pub fn reconstruction_errors<'a, I>(&self, windows: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut ws = self.workspace();
        windows
            .into_iter()
            .map(|w| {
                self.check_input(w)?;
                Ok(residual_norm(w, self.forward_with(w, &mut ws)))
            })
            .collect()
    }
}

pub(crate) fn residual_norm(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Scratch buffers for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// `acts[i]` is the input of layer `i`; the last entry is the output.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(shapes: &[LayerShape]) -> Self {
        let mut acts = Vec::with_capacity(shapes.len() + 1);
        acts.push(vec![0.0; shapes.first().map_or(0, LayerShape::input_len)]);
        acts.extend(shapes.iter().map(|s| vec![0.0; s.output_len()]));
        let deltas = acts.clone();
        Self { acts, deltas }
    }
}

fn dense_forward(n_in: usize, w: &LayerWeights, input: &[f64], out: &mut [f64]) {
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &w.weight[o * n_in..(o + 1) * n_in];
        *slot = w.bias[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn conv_forward(c_in: usize, kernel: usize, len: usize, w: &LayerWeights, input: &[f64], out: &mut [f64]) {
    let pad = (kernel - 1) / 2;
    for (co, out_row) in out.chunks_exact_mut(len).enumerate() {
        out_row.fill(w.bias[co]);
        for ci in 0..c_in {
            let in_row = &input[ci * len..(ci + 1) * len];
            let taps = &w.weight[(co * c_in + ci) * kernel..(co * c_in + ci + 1) * kernel];
            for (j, &k) in taps.iter().enumerate() {
                // output p reads input p + j - pad
                let lo = pad.saturating_sub(j);
                let hi = (len + pad).saturating_sub(j).min(len);
                for p in lo..hi {
                    out_row[p] += k * in_row[p + j - pad];
                }
            }
        }
    }
}

/// Runs the network; every layer but the last applies `act`.
pub fn forward<'w>(
    shapes: &[LayerShape],
    weights: &ModelWeights,
    act: Activation,
    input: &[f64],
    ws: &'w mut Workspace,
) -> &'w [f64] {
    ws.acts[0].copy_from_slice(input);
    let last = shapes.len() - 1;
    for (i, shape) in shapes.iter().enumerate() {
        let (before, after) = ws.acts.split_at_mut(i + 1);
        let x = &before[i];
        let y = &mut after[0];
        match *shape {
            LayerShape::Dense { n_in, .. } => dense_forward(n_in, &weights.layers[i], x, y),
            LayerShape::Conv { c_in, kernel, len, .. } => conv_forward(c_in, kernel, len, &weights.layers[i], x, y),
        }
        if i != last && act != Activation::Linear {
            y.iter_mut().for_each(|v| *v = act.apply(*v));
        }
    }
    &ws.acts[shapes.len()]
}

/// Backpropagates `d_out` (gradient w.r.t. the network output) through the
/// activations stored in `ws` by the preceding [`forward`] call, adding
/// parameter gradients into `grad`.
pub fn backward(
    shapes: &[LayerShape],
    weights: &ModelWeights,
    act: Activation,
    d_out: &[f64],
    ws: &mut Workspace,
    grad: &mut ModelWeights,
) {
    let n = shapes.len();
    ws.deltas[n].copy_from_slice(d_out);
    for i in (0..n).rev() {
        // deltas[i + 1] holds dL/d(output of layer i); turn it into dL/dz.
        if i != n - 1 && act != Activation::Linear {
            for (d, &a) in ws.deltas[i + 1].iter_mut().zip(&ws.acts[i + 1]) {
                *d *= act.derivative_from_output(a);
            }
        }
        let (lower, upper) = ws.deltas.split_at_mut(i + 1);
        let dz = &upper[0];
        let d_in = &mut lower[i];
        let x = &ws.acts[i];
        let w = &weights.layers[i];
        let g = &mut grad.layers[i];
        match shapes[i] {
            LayerShape::Dense { n_in, .. } => {
                d_in.fill(0.0);
                for (o, &dzo) in dz.iter().enumerate() {
                    g.bias[o] += dzo;
                    if dzo == 0.0 {
                        continue;
                    }
                    let g_row = &mut g.weight[o * n_in..(o + 1) * n_in];
                    let w_row = &w.weight[o * n_in..(o + 1) * n_in];
                    for k in 0..n_in {
                        g_row[k] += dzo * x[k];
                        d_in[k] += dzo * w_row[k];
                    }
                }
            }
            LayerShape::Conv { c_in, kernel, len, .. } => {
                let pad = (kernel - 1) / 2;
                d_in.fill(0.0);
                for (co, dz_row) in dz.chunks_exact(len).enumerate() {
                    g.bias[co] += dz_row.iter().sum::<f64>();
                    for ci in 0..c_in {
                        let x_row = &x[ci * len..(ci + 1) * len];
                        let base = (co * c_in + ci) * kernel;
                        for j in 0..kernel {
                            let lo = pad.saturating_sub(j);
                            let hi = (len + pad).saturating_sub(j).min(len);
                            let wk = w.weight[base + j];
                            let mut acc = 0.0;
                            for (p, &dz) in dz_row.iter().enumerate().take(hi).skip(lo) {
                                let q = p + j - pad;
                                acc += dz * x_row[q];
                                d_in[ci * len + q] += wk * dz;
                            }
                            g.weight[base + j] += acc;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::genome::LayerSpec;
    use crate::rng::substream;

    fn genome(kind: LayerKind) -> ModelGenome {
        ModelGenome::uniform(kind, 3, &[16, 20, 18], 3, 0.01, Activation::Tanh)
    }

    #[test]
    fn shapes_mirror_and_preserve_io() {
        for kind in [LayerKind::FullyConnected, LayerKind::Conv1d] {
            let s = layer_shapes(&genome(kind), 4);
            assert_eq!(s.len(), 6);
            assert_eq!(s[0].input_len(), 12);
            assert_eq!(s[5].output_len(), 12);
            for i in 0..3 {
                assert_eq!(s[i].input_len(), s[5 - i].output_len());
                assert_eq!(s[i].output_len(), s[5 - i].input_len());
            }
        }
    }

    #[test]
    fn instantiate_is_seeded_with_zero_bias() {
        let g = genome(LayerKind::Conv1d);
        let a = instantiate(&g, 4, &mut substream(1, &[]));
        let b = instantiate(&g, 4, &mut substream(1, &[]));
        let c = instantiate(&g, 4, &mut substream(2, &[]));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn output_shape_and_zero_model() {
        for kind in [LayerKind::FullyConnected, LayerKind::Conv1d] {
            let g = genome(kind);
            let sub = Subspace::from_iter(0..4);
            let mut m = TrainedModel::init(g, sub, &mut substream(3, &[])).unwrap();
            let x: Vec<f64> = (0..12).map(|i| f64::from(i) / 7.0).collect();
            assert_eq!(m.forward(&x).unwrap().len(), 12);
            m.weights.fill(0.0);
            assert!(m.forward(&x).unwrap().iter().all(|&v| v == 0.0));
            assert!(m.forward(&x[..11]).is_err());
        }
    }

    #[test]
    fn identity_weights_reproduce_input() {
        // 1-step window over 3 features; every layer 3 -> 3 identity, linear.
        let mut g = ModelGenome::uniform(LayerKind::FullyConnected, 1, &[3, 3, 3], 1, 0.01, Activation::Linear);
        g.encoder_layers[0] = LayerSpec::fully_connected(1, 3);
        let sub = Subspace::from_iter(0..3);
        let shapes = layer_shapes(&g, 3);
        let mut w = ModelWeights::zeros(&shapes);
        for l in &mut w.layers {
            for d in 0..3 {
                l.weight[d * 3 + d] = 1.0;
            }
        }
        let m = TrainedModel::new(g, w, sub).unwrap();
        let x = [0.25, -1.5, 3.0];
        assert_eq!(m.forward(&x).unwrap(), x.to_vec());
        assert_eq!(m.reconstruction_error(&x).unwrap(), 0.0);
    }

    #[test]
    fn reconstruction_error_is_l2() {
        assert_eq!(residual_norm(&[0.0, 0.0, 0.0], &[0.0, 3.0, 0.0]), 3.0);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let shape = LayerShape::Conv {
            c_in: 2,
            c_out: 1,
            kernel: 3,
            len: 4,
        };
        let mut w = LayerWeights::zeros(&shape);
        w.weight = vec![1.0, 2.0, 3.0, 0.5, 0.0, -1.0];
        w.bias = vec![0.25];
        let x = [1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0];
        let mut y = [0.0; 4];
        conv_forward(2, 3, 4, &w, &x, &mut y);
        // pad 1: y[p] = b + sum_j w[j] * x[p + j - 1]
        let expect = |p: i32| {
            let mut s = 0.25;
            for ci in 0..2 {
                for j in 0..3 {
                    let q = p + j - 1;
                    if (0..4).contains(&q) {
                        s += w.weight[(ci * 3 + j) as usize] * x[(ci * 4 + q) as usize];
                    }
                }
            }
            s
        };
        for p in 0..4 {
            assert_eq!(y[p as usize], expect(p));
        }
    }
}
