//! Amodal semantic segmentation tooling for Cityscapes-style data.
//!
//! Builds an occluder bank from annotated instances, synthesizes amodal
//! frames by pasting occluders with Gaussian-blended edges, encodes amodal
//! labels as groupwise tensors, and scores predictions with visible,
//! invisible and total mIoU.

pub mod bank;
pub mod blend;
pub mod cityscapes;
pub mod cli;
pub mod codec;
pub mod compositor;
pub mod error;
pub mod fixtures;
pub mod labels;
pub mod metrics;
pub mod raster;
pub mod stats;

pub use error::{Error, Result};
