use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::RigidTransform;
use crate::error::{Error, Result};

/// Pinhole camera with square pixels and no distortion. Focal length and
/// principal point are in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    focal: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl Camera {
    pub fn new(focal: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::invalid(format!("focal length must be positive, got {focal}")));
        }
        if cx < 0.0 || cx > width as f64 || cy < 0.0 || cy > height as f64 {
            return Err(Error::invalid(format!(
                "principal point ({cx}, {cy}) outside image bounds {width}x{height}"
            )));
        }
        Ok(Self {
            focal,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Projects a camera-space point: `(f·X/Z + cx, f·Y/Z + cy)`.
    ///
    /// Returns `None` for `Z ≤ 0` — points behind the camera are excluded,
    /// never clamped.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.focal * p.x / p.z + self.cx,
            self.focal * p.y / p.z + self.cy,
        ))
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x < self.width as f64 && px.y >= 0.0 && px.y < self.height as f64
    }
}

/// Projects a world point through a rigid pose: `π(R·x + t)`.
///
/// The perspective projection is invariant to a joint scaling of shape and
/// translation: `π(R·(s·x) + s·t) = π(R·x + t)` for any `s > 0`, which is why
/// image evidence alone cannot pin down absolute size.
pub fn project_point(
    x: &Vector3<f64>,
    pose: &RigidTransform,
    cam: &Camera,
) -> Option<Vector2<f64>> {
    use super::PointTransform;
    cam.project(&pose.apply(x))
}
