//! Semantic line segments: labelled image segments with a category.
//!
//! The crate provides the pieces needed to evaluate and work with them:
//!
//! - [`segment`]: the segment type, its encodings and the category registry
//! - [`acl`]: the angle-center-length overlap used instead of IoU
//! - [`eval`]: COCO-style mAP over ACL thresholds
//! - [`repeatability`]: detection repeatability under random affine warps
//! - [`detector`]: targets, losses and decoding of a center-point detector
//! - [`bam`]: reference forward pass of the bi-atrous module
//! - [`geometry3d`]: label consistency across a stereo pair and a previous frame
//! - [`refine`]: snapping labels onto gradient-supported image segments
//! - [`lcd`]: loop closure from per-frame segment signatures
//! - [`io`] and [`cli`]: file formats and the `semls` command
//!
//! Runnable examples live in `examples/`: `acl_overlap`, `encodings`,
//! `evaluate_detections`, `affine_repeatability`,
//! `heatmap_targets_and_losses`, `bi_atrous_module`,
//! `triplet_projection_error`, `label_refinement`, `loop_closure` and
//! `dataset_stats`.

pub mod acl;
pub mod bam;
pub mod cli;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry3d;
pub mod io;
pub mod lcd;
pub mod refine;
pub mod repeatability;
pub mod segment;
pub mod selfcheck;
pub mod synth;

pub use error::{Error, Result};
