//! Joint bird's-eye-view object detection and motion forecasting on
//! synthetic traffic scenes, comparing two spatial-interaction mechanisms:
//! an interaction convolutional module (rotated actor-frame feature crops
//! aggregated by a small CNN) and a message-passing graph stage, plus a
//! geometric penetration loss on predicted trajectories.
//!
//! Everything runs on a from-scratch f64 tensor engine with reverse-mode
//! autodiff; scenes, rasters and metrics are deterministic given seeds.

pub mod backbone;
pub mod error;
pub mod eval;
pub mod geom;
pub mod gnn;
pub mod harness;
pub mod icm;
pub mod intloss;
pub mod raster;
pub mod scenegen;
pub mod tensorad;

pub use error::{Error, Result};
