//! Spatially aware GAN training at desk scale.
//!
//! A generator is conditioned on multi-level Gaussian heatmap pyramids
//! through spatial encoding layers; its attention is pulled toward the
//! discriminator's GradCAM maps with an alignment loss. The crate also
//! carries the evaluation side: a disequilibrium indicator, Fréchet
//! distance, logging and checkpoints.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod heatmap;
pub mod imageio;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod sel;
pub mod trainer;

pub use error::{Error, Result};
