//! Region-weighted L1 reconstruction loss.

use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Mesh;

/// `Σᵢ κᵢ · Σ_c |predᵢ,c − gtᵢ,c|`: per-coordinate L1, weighted per vertex by
/// the region weight κ (face 150.0, scalp 1.0, eyes/ears 0.01 in the
/// reference scheme — the weights travel with the model file).
///
/// Returns the loss and its subgradient with respect to the predicted
/// vertices; the subgradient at a zero residual is zero.
pub fn masked_l1(
    pred: &Mesh,
    gt: &Mesh,
    kappa: &DVector<f64>,
) -> Result<(f64, Vec<Vector3<f64>>)> {
    if pred.vertices.len() != gt.vertices.len() {
        return Err(Error::DimensionMismatch {
            what: "vertex count",
            expected: gt.vertices.len(),
            actual: pred.vertices.len(),
        });
    }
    if kappa.len() != pred.vertices.len() {
        return Err(Error::DimensionMismatch {
            what: "kappa weights",
            expected: pred.vertices.len(),
            actual: kappa.len(),
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.vertices.len());
    for (i, (p, g)) in pred.vertices.iter().zip(&gt.vertices).enumerate() {
        let k = kappa[i];
        let d = p - g;
        loss += k * (d.x.abs() + d.y.abs() + d.z.abs());
        grad.push(Vector3::new(
            k * sign0(d.x),
            k * sign0(d.y),
            k * sign0(d.z),
        ));
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("masked L1 loss".into()));
    }
    Ok((loss, grad))
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh_of(vertices: Vec<Vector3<f64>>) -> Mesh {
        Mesh::new(vertices, vec![]).unwrap()
    }

    #[test]
    fn zero_residual_means_zero_loss_and_gradient() {
        let m = mesh_of(vec![Vector3::new(0.1, 0.2, 0.3); 5]);
        let kappa = DVector::from_element(5, 150.0);
        let (loss, grad) = masked_l1(&m, &m, &kappa).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == Vector3::zeros()));
    }

    #[test]
    fn uniform_offset_closed_form() {
        // κ=1, pred = gt + (δ,0,0) on all N vertices → loss = N·δ.
        let n = 17;
        let delta = 0.03;
        let gt = mesh_of((0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect());
        let pred = mesh_of(gt.vertices.iter().map(|v| v + Vector3::new(delta, 0.0, 0.0)).collect());
        let kappa = DVector::from_element(n, 1.0);
        let (loss, grad) = masked_l1(&pred, &gt, &kappa).unwrap();
        assert!((loss - n as f64 * delta).abs() < 1e-12);
        assert!(grad.iter().all(|g| *g == Vector3::new(1.0, 0.0, 0.0)));
    }

    #[test]
    fn region_weights_scale_the_cost() {
        // Moving a face vertex costs 150× the same move on a scalp vertex.
        let gt = mesh_of(vec![Vector3::zeros(), Vector3::zeros(), Vector3::zeros()]);
        let kappa = DVector::from_vec(vec![150.0, 1.0, 0.01]);
        let delta = Vector3::new(0.002, 0.0, 0.0);

        let mut face_moved = gt.clone();
        face_moved.vertices[0] += delta;
        let (face_loss, _) = masked_l1(&face_moved, &gt, &kappa).unwrap();

        let mut scalp_moved = gt.clone();
        scalp_moved.vertices[1] += delta;
        let (scalp_loss, _) = masked_l1(&scalp_moved, &gt, &kappa).unwrap();

        assert!((face_loss / scalp_loss - 150.0).abs() < 1e-9);
    }

    #[test]
    fn absolutely_homogeneous_in_the_residual() {
        let gt = mesh_of(vec![Vector3::new(1.0, -2.0, 0.5), Vector3::new(0.0, 0.1, 0.2)]);
        let offset = [Vector3::new(0.01, -0.03, 0.02), Vector3::new(-0.05, 0.0, 0.04)];
        let kappa = DVector::from_vec(vec![150.0, 0.01]);
        let alpha = 3.7;
        let pred1 = mesh_of(gt.vertices.iter().zip(&offset).map(|(v, o)| v + o).collect());
        let pred2 = mesh_of(gt.vertices.iter().zip(&offset).map(|(v, o)| v + alpha * o).collect());
        let (l1, _) = masked_l1(&pred1, &gt, &kappa).unwrap();
        let (l2, _) = masked_l1(&pred2, &gt, &kappa).unwrap();
        assert!((l2 - alpha * l1).abs() < 1e-12 * l2.abs().max(1.0));
    }

    #[test]
    fn vertex_count_mismatch_is_rejected() {
        let a = mesh_of(vec![Vector3::zeros(); 3]);
        let b = mesh_of(vec![Vector3::zeros(); 4]);
        assert!(masked_l1(&a, &b, &DVector::from_element(3, 1.0)).is_err());
    }
}
