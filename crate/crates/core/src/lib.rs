//! Metrical 3D face-model toolkit.
//!
//! A face reconstructed from a single perspective image has no well-defined
//! absolute size: scaling the shape and the camera distance together leaves
//! every pixel unchanged. This crate provides the building blocks for working
//! with face geometry in real metric units anyway, and for measuring how much
//! the usual scale-optimized ("Procrustes") evaluation hides:
//!
//! - [`geometry`] — meshes, the linear morphable model, cameras, projection,
//!   rigid/similarity transforms.
//! - [`io`] — OBJ/PLY meshes, the MTC1 tensor container, landmark JSON,
//!   P6/Pf image maps.
//! - [`alignment`] — Kabsch/Umeyama solvers, dense ICP, exact scan-to-mesh
//!   distances, and the rigid-vs-similarity benchmark protocols.
//! - [`registration`] — bring raw scans into model topology (landmark fit,
//!   model-parameter ICP, model-regularized non-rigid refinement).
//! - [`predictor`] — mapping network over identity features, masked L1
//!   training under AdamW, and a FiLM-conditioned sinusoidal decoder.
//! - [`tracker`] — analysis-by-synthesis expression tracking with spherical
//!   harmonics shading and a sampling-based differentiable renderer.

pub mod alignment;
pub mod error;
pub mod geometry;
pub mod io;
pub mod opt;
pub mod predictor;
pub mod registration;
pub mod tracker;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
