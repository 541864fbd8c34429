//! Stage 1: fit shape code and rigid pose to sparse landmark correspondences
//! by alternating a Kabsch pose solve with a regularized linear solve on z.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::alignment::kabsch_rigid;
use crate::error::{Error, Result};
use crate::geometry::{LinearShapeModel, PointTransform, RigidTransform};

use super::RegistrationConfig;

#[derive(Debug, Clone)]
pub struct LandmarkFit {
    pub z: DVector<f64>,
    pub pose: RigidTransform,
    /// Mean landmark distance in meters at the solution.
    pub residual_m: f64,
}

/// Minimizes `Σ_ℓ ‖R·(A + B·z)_ℓ + t − scan_ℓ‖² + λ_z·‖z‖²` over pose and z.
///
/// `correspondences` pairs model vertex indices with scan-space positions.
pub fn fit_landmarks(
    model: &LinearShapeModel,
    correspondences: &[(u32, Vector3<f64>)],
    cfg: &RegistrationConfig,
) -> Result<LandmarkFit> {
    if correspondences.len() < 4 {
        return Err(Error::Degenerate(format!(
            "landmark fit needs ≥4 correspondences, got {}",
            correspondences.len()
        )));
    }
    let n = model.vertex_count();
    for &(idx, _) in correspondences {
        if idx as usize >= n {
            return Err(Error::invalid(format!("landmark vertex {idx} out of range")));
        }
    }
    let k = model.shape_dim();
    let scan_pts: Vec<Vector3<f64>> = correspondences.iter().map(|c| c.1).collect();

    // Mean positions and 3×K basis blocks of the landmark vertices.
    let mean_pts: Vec<Vector3<f64>> = correspondences
        .iter()
        .map(|&(idx, _)| {
            let r = 3 * idx as usize;
            Vector3::new(model.mean()[r], model.mean()[r + 1], model.mean()[r + 2])
        })
        .collect();
    let blocks: Vec<DMatrix<f64>> = correspondences
        .iter()
        .map(|&(idx, _)| model.shape_basis().rows(3 * idx as usize, 3).into_owned())
        .collect();

    // The z-solve normal matrix is pose-independent (RᵀR = I).
    let mut normal = DMatrix::<f64>::identity(k, k) * cfg.lambda_z;
    for b in &blocks {
        normal += b.transpose() * b;
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Degenerate("landmark normal matrix is not positive definite".into()))?;

    let mut z = DVector::zeros(k);
    let mut last_residual = f64::INFINITY;
    for _ in 0..cfg.landmark_rounds.max(1) {
        // Pose for the current z.
        let model_pts: Vec<Vector3<f64>> = mean_pts
            .iter()
            .zip(&blocks)
            .map(|(a, b)| a + vec3(&(b * &z)))
            .collect();
        let pose = kabsch_rigid(&model_pts, &scan_pts, None)?;

        // z for the current pose.
        let rt = pose.rotation().transpose();
        let mut rhs = DVector::zeros(k);
        for ((a, b), y) in mean_pts.iter().zip(&blocks).zip(&scan_pts) {
            let target = rt * (y - pose.translation()) - a;
            rhs += b.transpose() * DVector::from_column_slice(target.as_slice());
        }
        z = chol.solve(&rhs);

        let residual = mean_residual(model, &z, &pose, correspondences);
        let converged = (last_residual - residual).abs() < 1e-14;
        last_residual = residual;
        if converged {
            break;
        }
    }
    // Final pose consistent with the final z.
    let model_pts: Vec<Vector3<f64>> = mean_pts
        .iter()
        .zip(&blocks)
        .map(|(a, b)| a + vec3(&(b * &z)))
        .collect();
    let pose = kabsch_rigid(&model_pts, &scan_pts, None)?;
    let residual_m = mean_residual(model, &z, &pose, correspondences);
    Ok(LandmarkFit {
        z,
        pose,
        residual_m,
    })
}

fn vec3(v: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn mean_residual(
    model: &LinearShapeModel,
    z: &DVector<f64>,
    pose: &RigidTransform,
    correspondences: &[(u32, Vector3<f64>)],
) -> f64 {
    let flat = model.mean() + model.shape_basis() * z;
    correspondences
        .iter()
        .map(|&(idx, y)| {
            let r = 3 * idx as usize;
            let v = Vector3::new(flat[r], flat[r + 1], flat[r + 2]);
            (pose.apply(&v) - y).norm()
        })
        .sum::<f64>()
        / correspondences.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_from_axis_angle;
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Toy model with K=10 and well-spread landmarks whose basis blocks have
    /// full column rank.
    fn toy_model(rng: &mut StdRng) -> LinearShapeModel {
        let n = 60;
        let k = 10;
        let mean = DVector::from_fn(3 * n, |i, _| {
            let v = i / 3;
            match i % 3 {
                0 => (v as f64 * 0.9).sin() * 0.08,
                1 => (v as f64 * 1.3).cos() * 0.08,
                _ => (v as f64 * 0.4).sin() * 0.08,
            }
        });
        let raw = DMatrix::from_fn(3 * n, k, |_, _| rng.random::<f64>() - 0.5);
        let shape = raw.qr().q();
        let expr = DMatrix::from_fn(3 * n, 3, |_, _| rng.random::<f64>() - 0.5);
        let landmarks: Vec<u32> = (0..12).map(|i| i * 5).collect();
        LinearShapeModel::new(
            mean,
            shape,
            expr,
            vec![],
            landmarks,
            DVector::from_element(n, 1.0),
            None,
        )
        .unwrap()
    }

    fn scan_landmarks(
        model: &LinearShapeModel,
        z: &DVector<f64>,
        pose: &RigidTransform,
    ) -> Vec<(u32, Vector3<f64>)> {
        let mesh = model.decode(z, None).unwrap();
        model
            .landmarks()
            .iter()
            .map(|&idx| (idx, pose.apply(&mesh.vertices[idx as usize])))
            .collect()
    }

    #[test]
    fn zero_code_identity_pose_is_recovered() {
        let mut rng = StdRng::seed_from_u64(90);
        let model = toy_model(&mut rng);
        let corr = scan_landmarks(&model, &DVector::zeros(10), &RigidTransform::identity());
        let cfg = RegistrationConfig {
            lambda_z: 1e-9,
            ..Default::default()
        };
        let fit = fit_landmarks(&model, &corr, &cfg).unwrap();
        assert!(fit.z.amax() < 1e-6, "z {:?}", fit.z);
        assert!((fit.pose.rotation() - nalgebra::Matrix3::identity()).abs().max() < 1e-6);
        assert!(fit.pose.translation().norm() < 1e-6);
        assert!(fit.residual_m < 1e-9);
    }

    #[test]
    fn recovers_known_code_under_random_pose() {
        let mut rng = StdRng::seed_from_u64(91);
        let model = toy_model(&mut rng);
        for round in 0..5 {
            let z_true = DVector::from_fn(10, |_, _| (rng.random::<f64>() - 0.5) * 0.02);
            let pose_true = RigidTransform::new(
                rotation_from_axis_angle(&Vector3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                )),
                Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 0.3,
            )
            .unwrap();
            let corr = scan_landmarks(&model, &z_true, &pose_true);
            let cfg = RegistrationConfig {
                lambda_z: 1e-10,
                landmark_rounds: 100,
                ..Default::default()
            };
            let fit = fit_landmarks(&model, &corr, &cfg).unwrap();
            assert!(
                (&fit.z - &z_true).amax() < 1e-4,
                "round {round}: z error {}",
                (&fit.z - &z_true).amax()
            );
        }
    }

    #[test]
    fn infinite_regularization_collapses_to_mean_face_kabsch() {
        let mut rng = StdRng::seed_from_u64(92);
        let model = toy_model(&mut rng);
        let z_true = DVector::from_fn(10, |_, _| (rng.random::<f64>() - 0.5) * 0.02);
        let pose_true = RigidTransform::from_axis_angle(
            &Vector3::new(0.2, -0.1, 0.4),
            Vector3::new(0.1, 0.0, 0.2),
        );
        let corr = scan_landmarks(&model, &z_true, &pose_true);
        let cfg = RegistrationConfig {
            lambda_z: 1e12,
            ..Default::default()
        };
        let fit = fit_landmarks(&model, &corr, &cfg).unwrap();
        assert!(fit.z.amax() < 1e-9, "z should vanish, got {}", fit.z.amax());
        // Pose equals the Kabsch fit of the mean-face landmarks.
        let mean_mesh = model.mean_mesh();
        let src: Vec<Vector3<f64>> = model.landmarks().iter().map(|&i| mean_mesh.vertices[i as usize]).collect();
        let dst: Vec<Vector3<f64>> = corr.iter().map(|c| c.1).collect();
        let kabsch = kabsch_rigid(&src, &dst, None).unwrap();
        assert!((fit.pose.rotation() - kabsch.rotation()).abs().max() < 1e-9);
        assert!((fit.pose.translation() - kabsch.translation()).norm() < 1e-9);
    }

    #[test]
    fn too_few_landmarks_is_degenerate() {
        let mut rng = StdRng::seed_from_u64(93);
        let model = toy_model(&mut rng);
        let corr = vec![
            (0u32, Vector3::zeros()),
            (5, Vector3::x()),
            (10, Vector3::y()),
        ];
        assert!(matches!(
            fit_landmarks(&model, &corr, &RegistrationConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }
}
