//! Training-free open-vocabulary semantic segmentation.
//!
//! The engine encodes image tiles with a ViT whose final layers attend only
//! within regions taken from class-agnostic segmentation masks, compares
//! patch features with class text embeddings, and merges several
//! same-architecture checkpoints using weights derived from how well each
//! separates prompt variants of different classes.

pub mod cli;
pub mod container;
pub mod encoder;
mod error;
pub mod eval;
pub mod exec;
pub mod merge;
pub mod numerics;
pub mod raster;
pub mod regions;
pub mod rng;
pub mod segment;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use exec::Execution;
