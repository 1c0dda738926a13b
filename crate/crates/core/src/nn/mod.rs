//! Autoencoder genomes, weights, training and reconstruction error.

pub mod genome;
pub mod io;
pub mod network;
pub mod train;

pub use genome::{Activation, GenomeBounds, LayerKind, LayerSpec, ModelGenome};
pub use network::{instantiate, layer_shapes, LayerShape, LayerWeights, ModelWeights, TrainedModel, Workspace};
pub use train::{loss, loss_and_gradient, train, TrainReport};
