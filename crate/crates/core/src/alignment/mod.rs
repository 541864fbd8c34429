//! Rigid (metrical) vs. similarity (non-metrical) alignment, dense ICP,
//! exact scan-to-mesh distances, and benchmark evaluation.
//!
//! The distinction this module operationalizes: aligning a prediction to a
//! reference with an optimal scale factor (Procrustes) hides absolute size
//! errors; rigid-only alignment keeps them visible. Both protocols share all
//! machinery except the transform solve.

mod benchmark;
mod distance;
mod icp;
mod solve;

pub use benchmark::{
    benchmark_evaluate, cumulative_error_curve, distance_stats, BenchmarkResult, CurvePoint,
    DistanceStats, InitMode, Protocol, SubjectFailure, SubjectPair, SubjectReport,
};
pub use distance::{
    barycentric_coordinates, closest_point_on_triangle, scan_to_mesh_distance_mm, TriangleBvh,
};
pub use icp::{icp_align, AlignmentReport, IcpOptions};
pub use solve::{kabsch_rigid, umeyama_similarity};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Landmark3;

/// Which transform family an alignment may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    /// Rotation + translation only. Metrical: size errors count.
    Rigid,
    /// Rotation + translation + uniform scale. Non-metrical: size errors are
    /// absorbed by the scale factor.
    Similarity,
}

impl std::fmt::Display for AlignMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlignMode::Rigid => write!(f, "rigid"),
            AlignMode::Similarity => write!(f, "similarity"),
        }
    }
}

/// Unordered reference scan: raw points in meters, optional named landmarks,
/// optional per-point face-region mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanCloud {
    pub points: Vec<Vector3<f64>>,
    pub landmarks: Vec<Landmark3>,
    pub face_mask: Option<Vec<bool>>,
}

impl ScanCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::invalid(format!("scan point {i} is non-finite")));
            }
        }
        Ok(Self {
            points,
            landmarks: Vec::new(),
            face_mask: None,
        })
    }

    pub fn with_landmarks(mut self, landmarks: Vec<Landmark3>) -> Self {
        self.landmarks = landmarks;
        self
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.points.len() {
            return Err(Error::DimensionMismatch {
                what: "face mask",
                expected: self.points.len(),
                actual: mask.len(),
            });
        }
        self.face_mask = Some(mask);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices selected by the face mask (all points when no mask is set).
    pub fn masked_indices(&self) -> Vec<usize> {
        match &self.face_mask {
            Some(mask) => mask
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(i))
                .collect(),
            None => (0..self.points.len()).collect(),
        }
    }
}
