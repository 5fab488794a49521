//! Contactless heart-rate estimation from facial video.
//!
//! The pipeline cuts a recording into one-second windows, crops a fixed
//! cheek rectangle from every frame ([`roi`]), turns each window into a
//! 25×25×3 feature image by spatial decomposition and ideal temporal
//! bandpass filtering ([`featex`]), and regresses heart rate from the
//! feature image with a small depthwise-separable CNN ([`cnn`]).
//! [`metrics`] scores predictions and [`synth`] produces recordings with a
//! known pulse for testing.

pub mod cnn;
pub mod error;
pub mod featex;
pub mod frames;
pub mod image;
pub mod ingest;
pub mod metrics;
pub mod roi;
pub mod synth;

pub use error::{Error, Result};
