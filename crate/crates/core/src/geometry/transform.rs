use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::ROTATION_TOL;
use crate::error::{Error, Result};

/// Maps points by `y = s·R·x + t`. Implemented by both transform kinds so that
/// alignment and registration code can be generic over the regime.
pub trait PointTransform {
    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64>;

    fn apply_points(&self, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        points.iter().map(|p| self.apply(p)).collect()
    }
}

fn check_rotation(rotation: &Matrix3<f64>) -> Result<()> {
    let gram = rotation.transpose() * rotation;
    let dev = (gram - Matrix3::identity()).abs().max();
    if dev >= ROTATION_TOL {
        return Err(Error::invalid(format!(
            "rotation is not orthonormal (‖RᵀR − I‖∞ = {dev:.3e})"
        )));
    }
    if rotation.determinant() <= 0.0 {
        return Err(Error::invalid("rotation has non-positive determinant"));
    }
    Ok(())
}

/// A rigid motion: rotation `R` (orthonormal, det +1) plus translation `t` in
/// meters. This is the alignment regime of metrical evaluation — absolute
/// size errors stay visible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rodrigues' formula. `axis_angle` encodes the axis by direction and the
    /// angle (radians) by magnitude.
    pub fn from_axis_angle(axis_angle: &Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation_from_axis_angle(axis_angle),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

impl PointTransform for RigidTransform {
    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// A similarity: uniform scale `s > 0` on top of a rigid motion. The extra
/// degree of freedom is exactly what non-metrical (Procrustes) evaluation
/// optimizes away.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("scale must be positive, got {scale}")));
        }
        check_rotation(&rotation)?;
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let s = 1.0 / self.scale;
        Self {
            scale: s,
            rotation: rt,
            translation: -(rt * self.translation) * s,
        }
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }
}

impl PointTransform for SimilarityTransform {
    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

impl From<RigidTransform> for SimilarityTransform {
    fn from(t: RigidTransform) -> Self {
        Self {
            scale: 1.0,
            rotation: t.rotation,
            translation: t.translation,
        }
    }
}

/// Skew-symmetric cross-product matrix `[v]×` with `[v]× w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `exp([r]×)` via Rodrigues, with a Taylor fallback near zero.
pub fn rotation_from_axis_angle(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let k = skew(r);
    if theta < 1e-9 {
        return Matrix3::identity() + k + k * k * 0.5;
    }
    let (s, c) = (theta.sin(), theta.cos());
    Matrix3::identity() + k * (s / theta) + k * k * ((1.0 - c) / (theta * theta))
}

/// Canonical axis-angle of a rotation matrix, with `‖r‖ ≤ π`.
pub fn axis_angle_from_rotation(rot: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((rot.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta < 1e-9 {
        // First-order: R ≈ I + [r]×.
        return Vector3::new(
            rot[(2, 1)] - rot[(1, 2)],
            rot[(0, 2)] - rot[(2, 0)],
            rot[(1, 0)] - rot[(0, 1)],
        ) * 0.5;
    }
    if (std::f64::consts::PI - theta) < 1e-6 {
        // Near π the antisymmetric part vanishes; use the symmetric part.
        let m = (rot + Matrix3::identity()) * 0.5;
        let axis = Vector3::new(m[(0, 0)].max(0.0).sqrt(), m[(1, 1)].max(0.0).sqrt(), m[(2, 2)].max(0.0).sqrt());
        // Fix signs from the off-diagonal products.
        let mut axis = axis;
        if m[(0, 1)] < 0.0 {
            axis.y = -axis.y;
        }
        if m[(0, 2)] < 0.0 {
            axis.z = -axis.z;
        }
        return axis.normalize() * theta;
    }
    let v = Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    );
    v * (theta / (2.0 * theta.sin()))
}

/// Right Jacobian of SO(3): `R(r + δ) ≈ R(r)·exp([J_r(r)·δ]×)`, so that
/// `∂(R(r)p)/∂r = −R(r)·[p]×·J_r(r)`.
pub fn so3_right_jacobian(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let k = skew(r);
    if theta < 1e-6 {
        return Matrix3::identity() - k * 0.5 + k * k * (1.0 / 6.0);
    }
    let t2 = theta * theta;
    Matrix3::identity() - k * ((1.0 - theta.cos()) / t2) + k * k * ((theta - theta.sin()) / (t2 * theta))
}
