//! Evaluation and loss machinery for fish morphometric keypoint detection.
//!
//! * [`keypoints`]: the 22-keypoint schema.
//! * [`dataset`]: COCO keypoint files, validation.
//! * [`morphometry`]: the 23 phenotypes and their measurement.
//! * [`metrics`]: OKS, PCK, PMP and the phenotype statistics (MAPE, mMAPE, Pearson, OLS).
//! * [`anatomy`]: anatomical priors and the box-constraint (ACR) loss.
//! * [`optim`]: a toy coordinate regressor trained on MSE + ACR with GradNorm weighting.
//! * [`synth`]: synthetic fish populations and prediction perturbations.
//! * [`plot`]: SVG figures.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anatomy;
pub mod cli;
pub mod dataset;
pub mod keypoints;
pub mod metrics;
pub mod morphometry;
pub mod optim;
pub mod plot;
pub mod synth;

pub use keypoints::{BBox, Keypoint, KeypointIndex, KeypointSet, Species, Visibility};
