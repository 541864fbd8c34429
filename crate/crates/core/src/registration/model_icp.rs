//! Stage 2: dense correspondence against the model surface, alternated with
//! a joint pose + parameter least-squares solve.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::alignment::{barycentric_coordinates, kabsch_rigid, TriangleBvh};
use crate::error::{Error, Result};
use crate::geometry::{LinearShapeModel, Mesh, PointTransform, RigidTransform};

use super::RegistrationConfig;

#[derive(Debug, Clone)]
pub struct ModelIcpFit {
    pub z: DVector<f64>,
    pub expr: DVector<f64>,
    pub pose: RigidTransform,
    /// Mean scan-to-surface distance (meters) per accepted iteration,
    /// starting with the initialization. Non-increasing.
    pub residual_history_m: Vec<f64>,
    /// Set when the solve was cut short by repeated residual increases; the
    /// returned state is still the best one seen.
    pub diverged: bool,
}

impl ModelIcpFit {
    pub fn residual_m(&self) -> f64 {
        *self.residual_history_m.last().expect("history never empty")
    }
}

#[derive(Clone)]
struct State {
    z: DVector<f64>,
    expr: DVector<f64>,
    pose: RigidTransform,
}

/// One scan point's correspondence on the decoded surface: barycentric
/// weights over a template triangle.
struct Corr {
    tri: [u32; 3],
    bary: [f64; 3],
    scan: Vector3<f64>,
}

fn decode_state(model: &LinearShapeModel, s: &State) -> Result<Mesh> {
    model.decode(&s.z, Some(&s.expr))
}

/// Mean scan-to-surface distance (meters) of the posed decoded mesh.
fn eval_mean_distance(
    model: &LinearShapeModel,
    state: &State,
    scan_pts: &[Vector3<f64>],
) -> Result<f64> {
    let mesh = decode_state(model, state)?;
    let bvh = TriangleBvh::build(&mesh)?;
    let inv = state.pose.inverse();
    let total: f64 = scan_pts
        .iter()
        .map(|p| bvh.closest_point(&inv.apply(p)).1.sqrt())
        .sum();
    Ok(total / scan_pts.len() as f64)
}

fn correspondences(
    model: &LinearShapeModel,
    state: &State,
    scan_pts: &[Vector3<f64>],
) -> Result<Vec<Corr>> {
    let mesh = decode_state(model, state)?;
    let bvh = TriangleBvh::build(&mesh)?;
    let inv = state.pose.inverse();
    Ok(scan_pts
        .iter()
        .map(|p| {
            let q = inv.apply(p);
            let (cp, _, tri) = bvh.closest_point(&q);
            let f = mesh.faces[tri as usize];
            let bary = barycentric_coordinates(
                &cp,
                &mesh.vertices[f[0] as usize],
                &mesh.vertices[f[1] as usize],
                &mesh.vertices[f[2] as usize],
            );
            Corr {
                tri: f,
                bary,
                scan: *p,
            }
        })
        .collect())
}

/// Solves pose (Kabsch) and the stacked `[z; expr]` code (Tikhonov-regularized
/// least squares) for fixed correspondences. Two alternating rounds.
fn solve_step(
    model: &LinearShapeModel,
    corrs: &[Corr],
    state: &State,
    cfg: &RegistrationConfig,
) -> Result<State> {
    let k = model.shape_dim();
    let ke = if cfg.fit_expression { model.expr_dim() } else { 0 };
    let dim = k + ke;

    // Per-correspondence mean point and basis block under barycentric weights.
    let mut mean_pts = Vec::with_capacity(corrs.len());
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(corrs.len());
    for c in corrs {
        let mut a = Vector3::zeros();
        let mut w = DMatrix::zeros(3, dim);
        for (j, &vi) in c.tri.iter().enumerate() {
            let row = 3 * vi as usize;
            let b = c.bary[j];
            a += b * Vector3::new(model.mean()[row], model.mean()[row + 1], model.mean()[row + 2]);
            let shape_rows = model.shape_basis().rows(row, 3);
            let mut block = w.columns_mut(0, k);
            block += shape_rows * b;
            if ke > 0 {
                let expr_rows = model.expr_basis().rows(row, 3);
                let mut block = w.columns_mut(k, ke);
                block += expr_rows * b;
            }
        }
        mean_pts.push(a);
        blocks.push(w);
    }

    let mut theta = DVector::zeros(dim);
    theta.rows_mut(0, k).copy_from(&state.z);
    if ke > 0 {
        theta.rows_mut(k, ke).copy_from(&state.expr);
    }
    let mut pose = state.pose;

    for _ in 0..2 {
        // Pose with the current code.
        let src: Vec<Vector3<f64>> = mean_pts
            .iter()
            .zip(&blocks)
            .map(|(a, w)| {
                let d = w * &theta;
                a + Vector3::new(d[0], d[1], d[2])
            })
            .collect();
        let dst: Vec<Vector3<f64>> = corrs.iter().map(|c| c.scan).collect();
        pose = kabsch_rigid(&src, &dst, None)?;

        // Code with the current pose.
        let mut normal = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..k {
            normal[(i, i)] = cfg.lambda_z;
        }
        for i in k..dim {
            normal[(i, i)] = cfg.lambda_expr;
        }
        let mut rhs = DVector::zeros(dim);
        let rt = pose.rotation().transpose();
        for ((a, w), c) in mean_pts.iter().zip(&blocks).zip(corrs) {
            normal += w.transpose() * w;
            let target = rt * (c.scan - pose.translation()) - a;
            rhs += w.transpose() * DVector::from_column_slice(target.as_slice());
        }
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::Degenerate("model ICP normal matrix is not positive definite".into()))?;
        theta = chol.solve(&rhs);
    }

    Ok(State {
        z: theta.rows(0, k).into_owned(),
        expr: if ke > 0 {
            theta.rows(k, ke).into_owned()
        } else {
            DVector::zeros(model.expr_dim())
        },
        pose,
    })
}

/// Optimizes model parameters against the scan by alternating dense
/// correspondence with a joint pose + code solve. Starts from the landmark
/// fit; the best state by mean scan-to-surface distance is returned, so the
/// result is never worse than the initialization.
pub fn fit_model_icp(
    model: &LinearShapeModel,
    scan: &crate::alignment::ScanCloud,
    init_z: &DVector<f64>,
    init_pose: &RigidTransform,
    cfg: &RegistrationConfig,
) -> Result<ModelIcpFit> {
    let masked = scan.masked_indices();
    if masked.is_empty() {
        return Err(Error::invalid("scan mask selects no points"));
    }
    let scan_pts: Vec<Vector3<f64>> = masked.iter().map(|&i| scan.points[i]).collect();
    if init_z.len() != model.shape_dim() {
        return Err(Error::DimensionMismatch {
            what: "initial shape code",
            expected: model.shape_dim(),
            actual: init_z.len(),
        });
    }

    let mut current = State {
        z: init_z.clone(),
        expr: DVector::zeros(model.expr_dim()),
        pose: *init_pose,
    };
    let mut best = current.clone();
    let mut best_residual = eval_mean_distance(model, &current, &scan_pts)?;
    let mut history = vec![best_residual];
    let mut strikes = 0usize;
    let mut diverged = false;

    for _ in 0..cfg.icp_iterations {
        let corrs = correspondences(model, &current, &scan_pts)?;
        current = solve_step(model, &corrs, &current, cfg)?;
        let residual = eval_mean_distance(model, &current, &scan_pts)?;
        if residual < best_residual {
            let improvement = best_residual - residual;
            best = current.clone();
            best_residual = residual;
            history.push(residual);
            strikes = 0;
            if improvement < cfg.icp_tolerance {
                break;
            }
        } else {
            strikes += 1;
            if strikes >= cfg.icp_patience.max(1) {
                // Residual increase persisted beyond tolerance for the
                // allowed cap: report the failure, keep the best state.
                diverged = residual > best_residual * 1.25 + cfg.icp_tolerance;
                break;
            }
        }
    }

    Ok(ModelIcpFit {
        z: best.z,
        expr: best.expr,
        pose: best.pose,
        residual_history_m: history,
        diverged,
    })
}
