//! Wavelet sub-band morph detection with group-sparse input channel
//! selection.
//!
//! The pipeline decomposes each grayscale face into 48 undecimated wavelet
//! sub-bands, trains a small convolutional classifier under a group-Lasso
//! penalty on its first-layer channel groups, keeps the sub-bands whose group
//! norms survive, retrains on that reduced stack, and reports morph attack
//! detection metrics.

pub mod convnet;
pub mod dataio;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod sparsity;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
