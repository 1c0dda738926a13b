//! Binary weight files.
//!
//! Layout (all integers `u32` little-endian):
//!
//! ```text
//! magic "EVAW" | version | layer_count
//! per layer:  rank | dims[rank] | bias_len
//! payload:    per layer, weight then bias values as f32 little-endian
//! ```

use std::path::Path;

use super::network::{LayerWeights, ModelWeights};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EVAW";
const VERSION: u32 = 1;

pub fn weights_to_bytes(weights: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * weights.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(weights.layers.len() as u32).to_le_bytes());
    for layer in &weights.layers {
        out.extend_from_slice(&(layer.shape.len() as u32).to_le_bytes());
        for &d in &layer.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(layer.bias.len() as u32).to_le_bytes());
    }
    for v in weights.params() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("weights file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32(&mut self) -> Result<f64> {
        let b = self.take(4)?;
        Ok(f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
    }
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<ModelWeights> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("not a weights file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let n_layers = cur.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for _ in 0..n_layers {
        let rank = cur.u32()?;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let bias_len = cur.u32()?;
        layers.push((shape, bias_len));
    }
    let layers = layers
        .into_iter()
        .map(|(shape, bias_len)| {
            let n: usize = shape.iter().product();
            let weight = (0..n).map(|_| cur.f32()).collect::<Result<Vec<_>>>()?;
            let bias = (0..bias_len).map(|_| cur.f32()).collect::<Result<Vec<_>>>()?;
            Ok(LayerWeights { shape, weight, bias })
        })
        .collect::<Result<Vec<_>>>()?;
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after weights payload".into()));
    }
    let weights = ModelWeights { layers };
    if !weights.is_finite() {
        return Err(Error::Format("weights contain non-finite values".into()));
    }
    Ok(weights)
}

pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights_to_bytes(weights)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    weights_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::genome::{Activation, LayerKind, ModelGenome};
    use crate::nn::network::instantiate;
    use crate::rng::substream;

    #[test]
    fn save_load_save_is_bit_identical() {
        let g = ModelGenome::uniform(LayerKind::Conv1d, 5, &[16, 24, 17], 3, 0.01, Activation::Tanh);
        let w = instantiate(&g, 4, &mut substream(8, &[]));
        let first = weights_to_bytes(&w);
        let loaded = weights_from_bytes(&first).unwrap();
        assert_eq!(weights_to_bytes(&loaded), first);
        let mut rounded = w.clone();
        rounded.round_to_f32();
        assert_eq!(loaded, rounded);
    }

    #[test]
    fn rejects_corrupt_files() {
        let g = ModelGenome::uniform(LayerKind::FullyConnected, 2, &[16, 16, 16], 1, 0.01, Activation::Tanh);
        let bytes = weights_to_bytes(&instantiate(&g, 2, &mut substream(0, &[])));
        assert!(weights_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(weights_from_bytes(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(weights_from_bytes(&magic).is_err());
    }
}
