//! Cross-view geo-localization with orientation-aware Siamese embeddings.
//!
//! A ground-level equirectangular panorama and a north-up overhead tile are
//! each augmented with a two-channel orientation map (U-V), encoded by an
//! independent seven-block convolutional branch, pooled with generalized-mean
//! pooling over the last three blocks and normalized to a unit descriptor.
//! Matching is nearest-neighbour search in that descriptor space.
//!
//! Modules:
//!
//! - [`geometry`]: orientation maps, orientation-consistent downsampling and
//!   circular panorama shifts.
//! - [`autonn`]: the small differentiable layer set (conv, batch norm,
//!   leaky-ReLU, bilinear resize, GeM, L2 normalization) plus Adam and the
//!   checkpoint format.
//! - [`model`]: the two-branch encoder.
//! - [`objective`]: exhaustive in-batch triplet mining and the weighted
//!   soft-margin triplet loss.
//! - [`dataset`]: manifest IO, image decoding, seeded batching and the
//!   procedural synthetic cross-view world.
//! - [`evaluation`]: embedding index, retrieval, recall and localization
//!   metrics, north-noise sweep.
//! - [`train`]: the training loop tying the above together.
//! - [`cli`]: command implementations behind the `crossview` binary.

pub mod autonn;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod model;
pub mod objective;
pub mod train;
pub mod evaluation;

pub use error::{Error, Result};
