//! Multi-level neuroevolution of autoencoder ensembles for anomaly
//! detection in multivariate time series.
//!
//! The levels run in order: [`subspace`] evolution partitions the features,
//! [`model_evolution`] searches an architecture per subspace, [`finetune`]
//! refines weights without gradients, and [`ensemble`] combines the
//! calibrated detectors. [`pipeline`] drives all of them with persistence.

pub mod bench;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod finetune;
pub mod genetic;
pub mod model_evolution;
pub mod nn;
pub mod pipeline;
pub mod pool;
pub mod rng;
pub mod subspace;
pub mod synth;

pub use config::RunConfig;
pub use data::{Matrix, ReducedDataset, TimeSeriesDataset, WindowedDataset};
pub use ensemble::{EnsembleModel, EvaluationReport, ThresholdedModel};
pub use error::{Error, Result};
pub use finetune::FineTuneConfig;
pub use genetic::{EvolutionConfig, GenerationRecord, Scored};
pub use nn::{LayerSpec, ModelGenome, ModelWeights, TrainedModel};
pub use pipeline::{run_pipeline, Level, RunManifest};
pub use pool::WorkerPool;
pub use subspace::{Subspace, SubspacePartition};
