//! Anomalous machine sound detection from normal sounds only.
//!
//! A log-Mel spectrogram and a learned temporal feature (Tgram) are stacked
//! into a two-channel STgram, a MobileFaceNet classifier is trained to
//! recognise the machine ID of each clip, and the negative log probability of
//! the clip's own ID is used as its anomaly score.
//!
//! The `nn` feature (on by default) enables everything that needs tensors:
//! TgramNet, the classifier, training, scoring and the experiment runner.
//! Without it the crate still provides data handling, spectral features,
//! the scalar margin math and the evaluation metrics.

pub mod classifier;
pub mod dataio;
pub mod error;
pub mod features;
#[cfg(feature = "nn")]
pub mod experiments;
pub mod metrics;
#[cfg(feature = "nn")]
pub mod nn;
pub mod scorer;
#[cfg(feature = "nn")]
pub mod tgramnet;
#[cfg(feature = "nn")]
pub mod trainer;
mod util;

pub use error::{Error, Result};
