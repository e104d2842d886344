//! Audio-visual scene classification at desk scale.
//!
//! * [`audio`]: WAV decoding, MEL/GAM/CQT spectrograms, deltas, patching.
//! * [`nn`]: a small CNN/MLP engine with exact backprop, Adam, mixup and a KL + L2 loss.
//! * [`zoo`]: VGG14 and MLP builders and the checkpoint format.
//! * [`embedding`]: precomputed embedding files and batching.
//! * [`fusion`]: patch averaging, MEAN/PROD/MAX late fusion, accuracy and early detection.
//! * [`labels`]: the scene vocabulary and meta-class grouping.

pub mod audio;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod labels;
pub mod nn;
pub mod zoo;

pub use error::{Error, Result};
