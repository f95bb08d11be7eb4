//! Supervised deep hashing for similar-audio-event retrieval.
//!
//! The pipeline: decode audio, extract multi-window MFCC tensors, train a
//! small convolutional encoder with a weighted contrastive + weighted
//! pairwise objective and straight-through discrete gradients, binarize the
//! hash layer with a balanced sign, then serve and score Hamming-space
//! retrieval over a bit-packed index.

pub mod audio;
pub mod autodiff;
pub mod binio;
pub mod codec;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod features;
pub mod index;
pub mod loss;
pub mod metrics;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
