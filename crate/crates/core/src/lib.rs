//! Structural supervision for depth estimation in Manhattan-world scenes.
//!
//! The crate turns a depth estimate, an image and a camera into the
//! supervisory signals used to refine that depth:
//!
//! - dominant directions from line segments ([`geometry`]),
//! - surface normals from depth and their alignment with those directions
//!   ([`manhattan`]),
//! - planar regions from fused color and geometric cues ([`segmentation`]),
//! - per-region plane fits and co-planar depth ([`plane`]),
//! - photometric and smoothness terms ([`photometric`]),
//!
//! and combines them into one loss that [`optimize::refine_depth`]
//! minimizes over a depth field. [`synth`] renders box rooms with exact
//! ground truth for testing; [`metrics`] and [`io`] cover evaluation and
//! file formats.
//!
//! ```
//! use structdepth::geometry::{backproject, compute_normals, CameraIntrinsics, DepthMap, DEFAULT_RADII};
//! use structdepth::grid::Grid;
//!
//! let k = CameraIntrinsics::centered(20.0, 16, 12)?;
//! let depth = DepthMap::new(Grid::filled(16, 12, 2.0));
//! let normals = compute_normals(&backproject(&depth, &k)?, &DEFAULT_RADII);
//! let n = normals.normals[(8, 6)];
//! assert!((n.z + 1.0).abs() < 1e-12);
//! # Ok::<(), structdepth::Error>(())
//! ```

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod loss;
pub mod manhattan;
pub mod metrics;
pub mod optimize;
pub mod photometric;
pub mod plane;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/directions.md")]
    mod directions {}
    #[doc = include_str!("../../../book/src/manhattan.md")]
    mod manhattan {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/planes.md")]
    mod planes {}
    #[doc = include_str!("../../../book/src/photometric.md")]
    mod photometric {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
