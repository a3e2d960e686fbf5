//! Two-stream object recognition with minimal supervision.
//!
//! One classifier stream learns from texture imagery (noisy, pruned with a
//! per-class Gaussian density model), the other from procedurally rendered
//! silhouettes whose edge statistics are matched to real images. The two
//! softmax posteriors are averaged into the final score, which drives both
//! classification and detection.
//!
//! Module map:
//!
//! - [`imageio`]: rasters, boxes, manifests, crops, resizing, center-crop augmentation
//! - [`statsim`]: pose grids, silhouette rendering, statistics matching, edge-gradient histograms
//! - [`prune`]: per-class Gaussian fit and retention-threshold outlier removal
//! - [`nnet`]: small conv/fc classifier trained with momentum SGD
//! - [`fusion`]: average and max fusion of two posteriors
//! - [`detect`]: proposals, negative sampling, fused proposal scoring, NMS
//! - [`eval`]: IoU, matching, AP/mAP, accuracy, confusion, false-positive diagnosis

pub mod detect;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod imageio;
pub mod nnet;
pub mod prune;
pub mod seed;
pub mod statsim;
pub mod svg;

pub use error::{Error, Result};
