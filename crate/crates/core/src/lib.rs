//! Voxel geometry toolkit for tubular structures.
//!
//! The crate covers the geometric machinery around distance-transform
//! based tube segmentation:
//!
//! - [`volume`]: dense scalar volumes, raw+sidecar file I/O, CT intensity
//!   preprocessing, region cropping.
//! - [`edt`]: surface voxel extraction, an exact Euclidean distance
//!   transform seeded at the tube surface, and quantization of distances
//!   into integer scale classes.
//! - [`loss`]: reference implementations of the weighted cross-entropy and
//!   scale-distance losses with analytic gradients and a finite-difference
//!   verification harness.
//! - [`refine`]: pseudo-skeleton thresholding, Gaussian soft-shape
//!   reconstruction from skeleton and scales, probability-weighted
//!   refinement, binarization.
//! - [`metrics`]: Dice coefficient, symmetrized mean surface distance,
//!   screening tallies.
//! - [`phantom`]: synthetic tubular phantoms with analytic ground truth,
//!   synthetic network outputs, and brute-force oracles for the fast
//!   kernels.
//! - [`duct`]: dilated-duct screening with geodesic extreme points and
//!   candidate region extraction.
//!
//! All operations are pure functions over immutable inputs; anything
//! parallel produces bit-identical output regardless of thread count.

pub mod duct;
pub mod edt;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod phantom;
pub mod refine;
pub mod volume;

pub use error::{Error, Result};
