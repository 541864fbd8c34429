//! Analysis-by-synthesis expression tracking.
//!
//! Perspective rendering with spherical-harmonics Lambertian shading, a
//! sampling-based differentiable renderer (per-vertex color terms at the
//! rasterizer's surviving surface points), the three-term energy, and the
//! sequential per-frame optimizer. Frames are strictly sequential (warm-start
//! dependency); everything inside one energy evaluation is pure.

mod energy;
mod raster;
mod sh;
mod track;

pub use energy::{
    compute_visibility, energy, energy_grad, energy_grad_with_visibility,
    energy_with_visibility, StateGrad,
};
pub use raster::{
    project_vertices, rasterize_depth, rasterize_visible, render_colored, visible_by_ray_cast,
    ZBuffer,
};
pub use sh::{sh_basis, sh_basis_grad, sh_shade, sh_shade_full, ShCoeffs, SH_Y0};
pub use track::{
    eval_rmse, init_first_frame, render_state, track, FrameRmse, TrackOptions, TrackedFrame,
};

use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, LinearShapeModel, Mesh};
use crate::io::{DepthMap, RgbImage};

/// Internal reparameterization of the focal length for optimization: Adam's
/// per-parameter step is uniform in the flat vector, and pixels are a much
/// coarser unit than meters or radians.
pub const FOCAL_SCALE: f64 = 100.0;

/// The unknowns of the tracker: expression, albedo coefficients, rigid pose
/// (axis-angle + translation), 3-band SH illumination, and focal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerState {
    pub expr: DVector<f64>,
    pub albedo: DVector<f64>,
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
    pub sh: ShCoeffs,
    pub focal: f64,
}

impl TrackerState {
    pub fn validate(&self) -> Result<()> {
        let finite = self.expr.iter().all(|v| v.is_finite())
            && self.albedo.iter().all(|v| v.is_finite())
            && self.rot.iter().all(|v| v.is_finite())
            && self.trans.iter().all(|v| v.is_finite())
            && self.sh.0.iter().flatten().all(|v| v.is_finite())
            && self.focal.is_finite();
        if !finite {
            return Err(Error::NonFinite("tracker state".into()));
        }
        if self.rot.norm() >= std::f64::consts::PI {
            return Err(Error::invalid("axis-angle rotation must satisfy ‖r‖ < π"));
        }
        if self.trans.z <= 0.0 {
            return Err(Error::invalid("subject must be in front of the camera (t_z > 0)"));
        }
        if self.focal <= 0.0 {
            return Err(Error::invalid("focal length must be positive"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.expr.len() + self.albedo.len() + 3 + 3 + 27 + 1
    }

    /// Flat layout: expr, albedo, rot, trans, sh (band-major, RGB inner),
    /// focal / [`FOCAL_SCALE`].
    pub fn pack(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend(self.expr.iter());
        flat.extend(self.albedo.iter());
        flat.extend(self.rot.iter());
        flat.extend(self.trans.iter());
        for k in 0..9 {
            flat.extend_from_slice(&self.sh.0[k]);
        }
        flat.push(self.focal / FOCAL_SCALE);
        flat
    }

    pub fn unpack(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut o = 0;
        for i in 0..self.expr.len() {
            self.expr[i] = flat[o];
            o += 1;
        }
        for i in 0..self.albedo.len() {
            self.albedo[i] = flat[o];
            o += 1;
        }
        for i in 0..3 {
            self.rot[i] = flat[o];
            o += 1;
        }
        for i in 0..3 {
            self.trans[i] = flat[o];
            o += 1;
        }
        for k in 0..9 {
            for c in 0..3 {
                self.sh.0[k][c] = flat[o];
                o += 1;
            }
        }
        self.focal = flat[o] * FOCAL_SCALE;
    }

    /// Keeps the state in its valid chart after an unconstrained step: wraps
    /// the axis-angle below π and keeps the subject in front of the camera.
    pub fn canonicalize(&mut self) {
        let theta = self.rot.norm();
        if theta >= std::f64::consts::PI {
            let wrapped = theta % (2.0 * std::f64::consts::PI);
            let target = if wrapped > std::f64::consts::PI {
                wrapped - 2.0 * std::f64::consts::PI
            } else {
                wrapped
            };
            self.rot *= target / theta;
        }
        if self.trans.z < 1e-3 {
            self.trans.z = 1e-3;
        }
        if self.focal < 1.0 {
            self.focal = 1.0;
        }
    }
}

/// One observed landmark, resolved to a model vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLandmark {
    pub vertex: u32,
    pub px: Vector2<f64>,
    pub conf: f64,
}

/// One input frame: RGB image, resolved 2D landmarks, optional reference
/// depth for evaluation.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: RgbImage,
    pub landmarks: Vec<FrameLandmark>,
    pub depth: Option<DepthMap>,
}

impl Frame {
    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        if !self.image.is_finite() {
            return Err(Error::NonFinite("frame image".into()));
        }
        for l in &self.landmarks {
            if l.vertex as usize >= vertex_count {
                return Err(Error::invalid(format!("landmark vertex {} out of range", l.vertex)));
            }
            if l.px.x < 0.0
                || l.px.y < 0.0
                || l.px.x >= self.image.width as f64
                || l.px.y >= self.image.height as f64
            {
                return Err(Error::invalid("landmark pixel outside image"));
            }
        }
        Ok(())
    }
}

/// Everything that stays fixed across a sequence: the identity shape from
/// the predictor, the model providing expression and albedo bases, and the
/// principal point.
pub struct TrackContext<'a> {
    pub shape: &'a Mesh,
    pub model: &'a LinearShapeModel,
    pub cx: f64,
    pub cy: f64,
}

impl<'a> TrackContext<'a> {
    pub fn new(shape: &'a Mesh, model: &'a LinearShapeModel, cx: f64, cy: f64) -> Result<Self> {
        if shape.vertices.len() != model.vertex_count() {
            return Err(Error::DimensionMismatch {
                what: "shape mesh vs model",
                expected: model.vertex_count(),
                actual: shape.vertices.len(),
            });
        }
        if model.albedo().is_none() {
            return Err(Error::invalid("tracking requires a model with an albedo container"));
        }
        Ok(Self {
            shape,
            model,
            cx,
            cy,
        })
    }

    pub fn camera(&self, focal: f64, width: u32, height: u32) -> Result<Camera> {
        Camera::new(focal, self.cx, self.cy, width, height)
    }

    /// A neutral state sized for this context.
    pub fn neutral_state(&self, focal: f64, trans_z: f64) -> TrackerState {
        TrackerState {
            expr: DVector::zeros(self.model.expr_dim()),
            albedo: DVector::zeros(self.model.albedo().map_or(0, |a| a.coeff_dim())),
            rot: Vector3::zeros(),
            trans: Vector3::new(0.0, 0.0, trans_z),
            sh: ShCoeffs::ambient(2.0),
            focal,
        }
    }
}

/// Balance of the energy terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyWeights {
    pub dense: f64,
    pub landmark: f64,
    pub reg: f64,
    /// Weight of the albedo coefficients inside the regularizer.
    pub lambda_albedo: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            dense: 1.0,
            landmark: 0.05,
            reg: 1e-4,
            lambda_albedo: 1.0,
        }
    }
}

/// The three energy terms, their weights, and the visible-vertex count. The
/// total is assembled exactly as `w_dense·E_dense + w_lmk·E_lmk + w_reg·E_reg`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dense: f64,
    pub landmark: f64,
    pub reg: f64,
    pub total: f64,
    pub weights: EnergyWeights,
    pub visible_count: usize,
}
