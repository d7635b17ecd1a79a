//! Building damage detection from pre/post-event image pairs without
//! task-specific training.
//!
//! Buildings are localized on the pre-event image with a text-prompted
//! detector and a box-prompted segmenter, then each building patch pair is
//! scored against undamaged and damaged prompt ensembles. A separate
//! proposal factory turns multiscale detections into filtered pseudo-labels.
//! Model roles live behind the traits in [`inference`].

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod inference;
pub mod mask;
pub mod pipeline;
pub mod proposals;
pub mod raster;
pub mod runner;
pub mod scoring;

pub use error::{Error, Result};
