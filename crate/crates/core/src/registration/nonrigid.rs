//! Stage 3: free-form per-vertex refinement, regularized by distance to the
//! model's linear span and by edge smoothness.
//!
//! The solve is conjugate gradients on
//! `(D + λreg·(I−P) + λsmooth·L) d = D·(s−v) − λreg·(I−P)·(x−A)`, where `D`
//! selects vertices with a scan correspondence within the radius, `P` is the
//! projector onto the orthonormalized model span and `L` the edge Laplacian.
//! `λreg = ∞` has an analytic limit: the span projection itself, which makes
//! refinement idempotent in that regime.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::geometry::{flatten, unflatten, LinearShapeModel, Mesh};

use super::RegistrationConfig;

/// Orthonormal basis of the model's combined shape + expression span.
fn span_basis(model: &LinearShapeModel) -> DMatrix<f64> {
    let rows = model.mean().len();
    let k = model.shape_dim();
    let ke = model.expr_dim();
    let mut combined = DMatrix::zeros(rows, k + ke);
    combined.columns_mut(0, k).copy_from(model.shape_basis());
    combined.columns_mut(k, ke).copy_from(model.expr_basis());
    combined.qr().q()
}

/// `v − B̃·(B̃ᵀ·v)`: application of `I − P`.
fn apply_complement(basis: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    v - basis * (basis.transpose() * v)
}

struct Operator<'a> {
    data_mask: &'a [bool],
    basis: &'a DMatrix<f64>,
    edges: &'a [[u32; 2]],
    lambda_reg: f64,
    lambda_smooth: f64,
}

impl Operator<'_> {
    fn apply(&self, d: &DVector<f64>) -> DVector<f64> {
        let n = self.data_mask.len();
        let mut out = DVector::zeros(3 * n);
        for (i, &active) in self.data_mask.iter().enumerate() {
            if active {
                for c in 0..3 {
                    out[3 * i + c] += d[3 * i + c];
                }
            }
        }
        if self.lambda_reg > 0.0 {
            out += self.lambda_reg * apply_complement(self.basis, d);
        }
        if self.lambda_smooth > 0.0 {
            for e in self.edges {
                let (i, j) = (e[0] as usize, e[1] as usize);
                for c in 0..3 {
                    let diff = d[3 * i + c] - d[3 * j + c];
                    out[3 * i + c] += self.lambda_smooth * diff;
                    out[3 * j + c] -= self.lambda_smooth * diff;
                }
            }
        }
        // Tiny ridge keeps the system positive definite when the penalty
        // nullspaces happen to intersect.
        out + d * 1e-12
    }
}

fn conjugate_gradient(op: &Operator, b: &DVector<f64>, max_iter: usize, tol: f64) -> DVector<f64> {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    let threshold = tol * tol * b.norm_squared().max(1e-300);
    for _ in 0..max_iter {
        if rs <= threshold {
            break;
        }
        let ap = op.apply(&p);
        let alpha = rs / p.dot(&ap).max(1e-300);
        x += alpha * &p;
        r -= alpha * ap;
        let rs_new = r.norm_squared();
        p = &r + (rs_new / rs) * p;
        rs = rs_new;
    }
    x
}

/// Refines `current` toward `scan`. Both must live in the model's frame: the
/// span regularizer is expressed there. Vertices with no scan point within
/// `cfg.radius_m` carry only regularization; with no correspondences at all
/// the mesh is returned unchanged.
pub fn nonrigid_refine(
    current: &Mesh,
    scan: &crate::alignment::ScanCloud,
    model: &LinearShapeModel,
    cfg: &RegistrationConfig,
) -> Mesh {
    let basis = span_basis(model);
    if cfg.lambda_reg.is_infinite() {
        // Analytic limit: project onto the affine span through the mean.
        let x = flatten(&current.vertices);
        let projected = model.mean() + (&x - model.mean()) - apply_complement(&basis, &(&x - model.mean()));
        return Mesh {
            vertices: unflatten(&projected),
            faces: current.faces.clone(),
            albedo: current.albedo.clone(),
        };
    }

    let edges = current.edges();
    let masked = scan.masked_indices();
    let mut mesh = current.clone();
    for _ in 0..cfg.nonrigid_rounds.max(1) {
        let n = mesh.vertices.len();
        // Nearest scan point per vertex, inside the correspondence radius.
        let mut data_mask = vec![false; n];
        let mut targets = vec![Vector3::zeros(); n];
        let radius_sq = cfg.radius_m * cfg.radius_m;
        for (i, v) in mesh.vertices.iter().enumerate() {
            let mut best = f64::INFINITY;
            for &si in &masked {
                let d = (scan.points[si] - v).norm_squared();
                if d < best {
                    best = d;
                    targets[i] = scan.points[si];
                }
            }
            data_mask[i] = best <= radius_sq;
        }
        if !data_mask.iter().any(|&m| m) {
            return mesh;
        }

        let x = flatten(&mesh.vertices);
        let mut rhs = DVector::zeros(3 * n);
        for i in 0..n {
            if data_mask[i] {
                let delta = targets[i] - mesh.vertices[i];
                rhs[3 * i] = delta.x;
                rhs[3 * i + 1] = delta.y;
                rhs[3 * i + 2] = delta.z;
            }
        }
        if cfg.lambda_reg > 0.0 {
            rhs -= cfg.lambda_reg * apply_complement(&basis, &(&x - model.mean()));
        }
        let op = Operator {
            data_mask: &data_mask,
            basis: &basis,
            edges: &edges,
            lambda_reg: cfg.lambda_reg,
            lambda_smooth: cfg.lambda_smooth,
        };
        let d = conjugate_gradient(&op, &rhs, cfg.cg_iterations, cfg.cg_tolerance);
        let refined = &x + &d;
        mesh.vertices = unflatten(&refined);
    }
    mesh
}
