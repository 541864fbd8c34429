//! Closed-form weighted least-squares alignment: Kabsch for the rigid case,
//! Umeyama for the similarity case.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, SimilarityTransform};

struct Moments {
    src_mean: Vector3<f64>,
    dst_mean: Vector3<f64>,
    /// Σ ŵᵢ·(dstᵢ − μd)(srcᵢ − μs)ᵀ with normalized weights.
    cross: Matrix3<f64>,
    /// Σ ŵᵢ·‖srcᵢ − μs‖².
    src_var: f64,
}

fn moments(src: &[Vector3<f64>], dst: &[Vector3<f64>], weights: Option<&[f64]>) -> Result<Moments> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            what: "correspondences",
            expected: src.len(),
            actual: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 correspondences, got {}",
            src.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != src.len() {
            return Err(Error::DimensionMismatch {
                what: "weights",
                expected: src.len(),
                actual: w.len(),
            });
        }
        if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::invalid("weights must be non-negative and finite"));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..src.len()).map(weight).sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all correspondence weights are zero".into()));
    }
    let mut src_mean = Vector3::zeros();
    let mut dst_mean = Vector3::zeros();
    for i in 0..src.len() {
        let w = weight(i) / total;
        src_mean += w * src[i];
        dst_mean += w * dst[i];
    }
    let mut cross = Matrix3::zeros();
    let mut src_var = 0.0;
    for i in 0..src.len() {
        let w = weight(i) / total;
        let s = src[i] - src_mean;
        let d = dst[i] - dst_mean;
        cross += w * d * s.transpose();
        src_var += w * s.norm_squared();
    }
    Ok(Moments {
        src_mean,
        dst_mean,
        cross,
        src_var,
    })
}

/// SVD of the cross-covariance with reflection correction: the sign of the
/// smallest singular value is flipped when needed so that det(R) = +1.
fn optimal_rotation(cross: &Matrix3<f64>, scale_hint: f64) -> Result<(Matrix3<f64>, f64)> {
    let svd = cross.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let sv = svd.singular_values;
    // Rank < 2 leaves the rotation under-determined (collinear or coincident
    // points). scale_hint keeps the threshold meaningful for tiny clouds.
    let tol = 1e-12 * sv[0].max(scale_hint);
    if sv[1] <= tol {
        return Err(Error::Degenerate(
            "correspondence set is rank-deficient (collinear or coincident points)".into(),
        ));
    }
    let flip = (u.determinant() * v_t.determinant()).signum();
    let d = Vector3::new(1.0, 1.0, flip);
    let rot = u * Matrix3::from_diagonal(&d) * v_t;
    // tr(D·S) term of the optimal-scale formula.
    let trace = sv[0] + sv[1] + flip * sv[2];
    Ok((rot, trace))
}

/// Optimal rigid transform minimizing `Σ wᵢ‖R·srcᵢ + t − dstᵢ‖²`.
pub fn kabsch_rigid(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: Option<&[f64]>,
) -> Result<RigidTransform> {
    let m = moments(src, dst, weights)?;
    let (rot, _) = optimal_rotation(&m.cross, m.src_var.sqrt())?;
    let t = m.dst_mean - rot * m.src_mean;
    RigidTransform::new(rot, t)
}

/// Optimal similarity transform minimizing `Σ wᵢ‖s·R·srcᵢ + t − dstᵢ‖²`,
/// with the closed-form positive scale.
pub fn umeyama_similarity(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: Option<&[f64]>,
) -> Result<SimilarityTransform> {
    let m = moments(src, dst, weights)?;
    if m.src_var <= 0.0 {
        return Err(Error::Degenerate("source points have zero variance".into()));
    }
    let (rot, trace) = optimal_rotation(&m.cross, m.src_var.sqrt())?;
    let scale = trace / m.src_var;
    if !(scale > 0.0) {
        return Err(Error::Degenerate(format!("non-positive optimal scale {scale}")));
    }
    let t = m.dst_mean - scale * (rot * m.src_mean);
    SimilarityTransform::new(scale, rot, t)
}
