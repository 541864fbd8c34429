//! Bring an arbitrary scan into model topology: landmark fit, model-parameter
//! ICP, then model-regularized non-rigid refinement.
//!
//! Stage residuals are guaranteed non-increasing: each stage starts from the
//! previous stage's solution and its result is accepted only if it improves
//! the shared metric (mean scan-to-mesh distance).

mod landmark_fit;
mod model_icp;
mod nonrigid;
mod unify;

pub use landmark_fit::{fit_landmarks, LandmarkFit};
pub use model_icp::{fit_model_icp, ModelIcpFit};
pub use nonrigid::nonrigid_refine;
pub use unify::{unify, unify_to_dir, RegistrationResult, UnifyItem, UnifyManifest, UnifyOutcome};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    /// Tikhonov weight on the shape code z.
    pub lambda_z: f64,
    /// Tikhonov weight on the expression code.
    pub lambda_expr: f64,
    /// Fit expression jointly with shape during model ICP (the emitted
    /// neutral mesh always uses a zero expression code).
    pub fit_expression: bool,
    pub landmark_rounds: usize,
    pub icp_iterations: usize,
    pub icp_tolerance: f64,
    /// Consecutive non-improving ICP iterations tolerated before stopping.
    pub icp_patience: usize,
    /// Weight of the model-span penalty in the non-rigid stage.
    pub lambda_reg: f64,
    /// Weight of the edge-based smoothness penalty.
    pub lambda_smooth: f64,
    /// Correspondence radius (meters): vertices without a scan point within
    /// this radius carry only regularization (scans have holes).
    pub radius_m: f64,
    /// Outer correspondence/solve rounds of the non-rigid stage.
    pub nonrigid_rounds: usize,
    pub cg_iterations: usize,
    pub cg_tolerance: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            lambda_z: 1e-6,
            lambda_expr: 1e-4,
            fit_expression: true,
            landmark_rounds: 30,
            icp_iterations: 100,
            icp_tolerance: 1e-9,
            icp_patience: 3,
            lambda_reg: 1.0,
            lambda_smooth: 10.0,
            radius_m: 0.010,
            nonrigid_rounds: 3,
            cg_iterations: 500,
            cg_tolerance: 1e-10,
        }
    }
}
