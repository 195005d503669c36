//! Self-supervised feature extraction for single-look-complex SAR imagery.
//!
//! The pipeline: speckled SLC samples are augmented into multi-view sets
//! ([`augment`]), encoded by a small vision transformer into prototype
//! assignment distributions ([`encoder`]), and a student/teacher pair is
//! trained with a cross-view similarity loss plus an entropy regularizer
//! ([`objective`], [`trainer`]). Frozen features are then evaluated with
//! few-shot k-NN, a PCA pixel baseline and a 2-D t-SNE projection
//! ([`evaluate`]).
//!
//! Everything is deterministic given the seeds in the run configuration:
//! random streams are derived from `(seed, purpose, indices)` counters
//! ([`rng`]), so reruns reproduce augmentations, shuffles, splits and
//! projections bit for bit.

pub mod augment;
pub mod autodiff;
pub mod config;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod mat;
pub mod objective;
pub mod rng;
pub mod sar_data;
pub mod sfet;
pub mod svg;
pub mod trainer;

pub use error::{Result, SfeError};
