//! Reference numerics for a center-point segment detector.
//!
//! Nothing here is learned. The module turns annotations into dense
//! training targets, evaluates every loss term on caller-supplied prediction
//! arrays (with analytic gradients), and decodes prediction arrays back into
//! segments. Arrays are laid out channel-first: `(channels, rows, cols)` of
//! the feature map, which is the input image downsampled by the output
//! stride.

mod decode;
pub mod gradcheck;
mod loss;
mod targets;

pub use decode::{decode_detections, DecodeParams};
pub use loss::{
    direction_ce, direction_ce_grad, focal_loss, focal_loss_grad, masked_l1, masked_l1_grad, total_loss, Heads,
    LossBreakdown, LossWeights,
};
pub use targets::{draw_gaussian, gaussian_radius, gaussian_sigma, make_targets, TargetMaps};

/// Default output stride between input image and feature map.
pub const DEFAULT_STRIDE: usize = 4;

/// Focusing exponent on the ground-truth term of the heatmap loss.
pub const FOCAL_DELTA: f64 = 4.0;

/// Focusing exponent on the prediction term of the heatmap loss.
pub const FOCAL_GAMMA: f64 = 2.0;

/// Heatmap predictions are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const HEATMAP_EPS: f64 = 1e-12;

/// Minimum box IoU used to size the heatmap Gaussian.
pub const GAUSSIAN_MIN_OVERLAP: f64 = 0.7;

/// Which geometry heads the detector carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    /// Angle and length heads.
    AngMidLen,
    /// Width/height and direction heads.
    LineAsObj,
}

/// How the direction head of [`Encoding::LineAsObj`] is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectionMode {
    /// One channel, masked L1 against 0/1.
    Regression,
    /// Two logits, masked cross-entropy.
    Classification,
}
