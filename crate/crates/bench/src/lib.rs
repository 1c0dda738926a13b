//! Fixtures shared by the benchmarks.

use evoad_core::data::MinMaxScaler;
use evoad_core::synth::{generate_synthetic, SynthSpec};
use evoad_core::Matrix;

/// Scaled training rows of a synthetic series.
pub fn scaled_rows(features: usize, len: usize, seed: u64) -> Matrix {
    let d = generate_synthetic(&SynthSpec {
        features,
        train_len: len,
        test_len: 1000,
        seed,
        ..SynthSpec::default()
    })
    .expect("valid synthetic spec");
    MinMaxScaler::fit(&d.train.values)
        .transform(&d.train.values)
        .expect("scaler fitted on the same data")
}
