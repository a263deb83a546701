//! Category-level articulated object analysis from single partial point
//! clouds: synthetic data with exact ground truth, a per-point transformer
//! with multi-branch decoders, motion-consistency training, coarse-to-fine
//! joint voting, and evaluation metrics.

pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod ply;
pub mod voting;
pub mod synthdata;

pub use error::{CaptError, Result};
