use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard architecture limits. Configured bounds may only narrow these.
pub const MIN_LAYERS: usize = 3;
pub const MAX_LAYERS: usize = 6;
pub const MAX_WINDOW: usize = 12;
pub const MIN_CHANNELS: usize = 16;
pub const MAX_CHANNELS: usize = 6144;
pub const MIN_LEARNING_RATE: f64 = 1e-6;
pub const MAX_LEARNING_RATE: f64 = 0.1;

pub const GENOME_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    #[default]
    FullyConnected,
    Conv1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    /// Identity; used for tests and linear baselines.
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Only meaningful for `conv1d`; 1 for fully connected layers.
    pub kernel_size: usize,
}

impl LayerSpec {
    pub fn fully_connected(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: LayerKind::FullyConnected,
            in_channels,
            out_channels,
            kernel_size: 1,
        }
    }

    pub fn conv1d(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Self {
            kind: LayerKind::Conv1d,
            in_channels,
            out_channels,
            kernel_size,
        }
    }
}

/// Architecture of an autoencoder. Only the encoder is stored; the decoder
/// is its mirror image (reversed order, swapped channel counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGenome {
    pub encoder_layers: Vec<LayerSpec>,
    pub window_size: usize,
    pub learning_rate: f64,
    pub activation: Activation,
}

/// Configured architecture ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenomeBounds {
    pub min_layers: usize,
    pub max_layers: usize,
    pub min_channels: usize,
    pub max_channels: usize,
    pub max_window: usize,
    pub min_learning_rate: f64,
    pub max_learning_rate: f64,
}

impl Default for GenomeBounds {
    fn default() -> Self {
        Self {
            min_layers: MIN_LAYERS,
            max_layers: MAX_LAYERS,
            min_channels: MIN_CHANNELS,
            max_channels: MAX_CHANNELS,
            max_window: MAX_WINDOW,
            min_learning_rate: MIN_LEARNING_RATE,
            max_learning_rate: MAX_LEARNING_RATE,
        }
    }
}

impl GenomeBounds {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.min_layers < MIN_LAYERS || self.max_layers > MAX_LAYERS || self.min_layers > self.max_layers {
            return bad(format!(
                "layer range [{}, {}] must lie within [{MIN_LAYERS}, {MAX_LAYERS}]",
                self.min_layers, self.max_layers
            ));
        }
        if self.max_window == 0 || self.max_window > MAX_WINDOW {
            return bad(format!("max_window must lie in [1, {MAX_WINDOW}]"));
        }
        if self.min_channels == 0 || self.min_channels > self.max_channels {
            return bad("channel range is empty".into());
        }
        if !(self.min_learning_rate > 0.0 && self.min_learning_rate <= self.max_learning_rate) {
            return bad("learning-rate range is empty".into());
        }
        Ok(())
    }

    pub fn clamp_channels(&self, c: usize) -> usize {
        c.clamp(self.min_channels, self.max_channels)
    }
}

impl ModelGenome {
    pub fn num_layers(&self) -> usize {
        self.encoder_layers.len()
    }

    pub fn layer_kind(&self) -> LayerKind {
        self.encoder_layers
            .first()
            .map_or(LayerKind::FullyConnected, |l| l.kind)
    }

    /// Width of the last encoder layer.
    pub fn latent_channels(&self) -> usize {
        self.encoder_layers.last().map_or(0, |l| l.out_channels)
    }

    /// Decoder layers in execution order, derived from the encoder.
    pub fn decoder_layers(&self) -> Vec<LayerSpec> {
        self.encoder_layers
            .iter()
            .rev()
            .map(|l| LayerSpec {
                in_channels: l.out_channels,
                out_channels: l.in_channels,
                ..*l
            })
            .collect()
    }

    /// Re-establishes the channel chain: the first layer reads `window_size`
    /// channels and every layer reads what its predecessor writes.
    pub fn repair_chain(&mut self) {
        let mut prev = self.window_size;
        for layer in &mut self.encoder_layers {
            layer.in_channels = prev;
            prev = layer.out_channels;
        }
    }

    pub fn validate(&self, bounds: &GenomeBounds) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(format!("invalid genome: {msg}")));
        let n = self.num_layers();
        if n < bounds.min_layers || n > bounds.max_layers {
            return bad(format!(
                "{n} layers outside [{}, {}]",
                bounds.min_layers, bounds.max_layers
            ));
        }
        if self.window_size == 0 || self.window_size > bounds.max_window {
            return bad(format!(
                "window size {} outside [1, {}]",
                self.window_size, bounds.max_window
            ));
        }
        if !(self.learning_rate >= bounds.min_learning_rate && self.learning_rate <= bounds.max_learning_rate) {
            return bad(format!("learning rate {} outside range", self.learning_rate));
        }
        if self.encoder_layers[0].in_channels != self.window_size {
            return bad(format!(
                "first layer reads {} channels, window size is {}",
                self.encoder_layers[0].in_channels, self.window_size
            ));
        }
        for (i, pair) in self.encoder_layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return bad(format!("channel chain broken between layers {i} and {}", i + 1));
            }
        }
        for (i, l) in self.encoder_layers.iter().enumerate() {
            if l.out_channels < bounds.min_channels || l.out_channels > bounds.max_channels {
                return bad(format!(
                    "layer {i} has {} channels, outside [{}, {}]",
                    l.out_channels, bounds.min_channels, bounds.max_channels
                ));
            }
            if l.kernel_size == 0 {
                return bad(format!("layer {i} has zero kernel size"));
            }
            if l.kind == LayerKind::FullyConnected && l.kernel_size != 1 {
                return bad(format!("fully connected layer {i} has kernel size {}", l.kernel_size));
            }
        }
        Ok(())
    }

    /// Checks that conv kernels fit a subspace of `width` features.
    pub fn validate_for_width(&self, width: usize) -> Result<()> {
        if width == 0 {
            return Err(Error::Argument("subspace must contain at least one feature".into()));
        }
        if let Some(l) = self
            .encoder_layers
            .iter()
            .find(|l| l.kind == LayerKind::Conv1d && l.kernel_size > width)
        {
            return Err(Error::Argument(format!(
                "kernel size {} exceeds subspace width {width}",
                l.kernel_size
            )));
        }
        Ok(())
    }

    /// Builds a chained encoder with the given output widths.
    pub fn uniform(
        kind: LayerKind,
        window_size: usize,
        channels: &[usize],
        kernel_size: usize,
        learning_rate: f64,
        activation: Activation,
    ) -> Self {
        let mut prev = window_size;
        let encoder_layers = channels
            .iter()
            .map(|&c| {
                let spec = match kind {
                    LayerKind::FullyConnected => LayerSpec::fully_connected(prev, c),
                    LayerKind::Conv1d => LayerSpec::conv1d(prev, c, kernel_size),
                };
                prev = c;
                spec
            })
            .collect();
        Self {
            encoder_layers,
            window_size,
            learning_rate,
            activation,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GenomeDocument {
    schema_version: u32,
    #[serde(flatten)]
    genome: ModelGenome,
}

/// Serializes a genome as a versioned JSON document.
pub fn genome_to_json(genome: &ModelGenome) -> Result<String> {
    Ok(serde_json::to_string_pretty(&GenomeDocument {
        schema_version: GENOME_SCHEMA_VERSION,
        genome: genome.clone(),
    })?)
}

pub fn genome_from_json(text: &str) -> Result<ModelGenome> {
    let doc: GenomeDocument = serde_json::from_str(text)?;
    if doc.schema_version != GENOME_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported genome schema version {}",
            doc.schema_version
        )));
    }
    Ok(doc.genome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelGenome {
        ModelGenome::uniform(LayerKind::Conv1d, 4, &[32, 16, 24], 3, 0.01, Activation::Tanh)
    }

    #[test]
    fn decoder_mirrors_encoder() {
        let g = sample();
        let dec = g.decoder_layers();
        let enc = &g.encoder_layers;
        for (i, d) in dec.iter().enumerate() {
            let e = enc[enc.len() - 1 - i];
            assert_eq!((d.in_channels, d.out_channels), (e.out_channels, e.in_channels));
        }
        assert_eq!(dec.last().unwrap().out_channels, g.window_size);
    }

    #[test]
    fn validation() {
        let b = GenomeBounds::default();
        sample().validate(&b).unwrap();
        let mut g = sample();
        g.encoder_layers[1].in_channels = 7;
        assert!(g.validate(&b).is_err());
        g.repair_chain();
        g.validate(&b).unwrap();
        let mut g = sample();
        g.encoder_layers.truncate(2);
        assert!(g.validate(&b).is_err());
        let mut g = sample();
        g.window_size = 13;
        g.repair_chain();
        assert!(g.validate(&b).is_err());
        assert!(sample().validate_for_width(2).is_err());
        sample().validate_for_width(3).unwrap();
    }

    #[test]
    fn json_document_has_fixed_fields() {
        let text = genome_to_json(&sample()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in [
            "schema_version",
            "encoder_layers",
            "window_size",
            "learning_rate",
            "activation",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(genome_from_json(&text).unwrap(), sample());
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(genome_from_json(&bumped).is_err());
    }
}
