//! The tracking energy and its analytic gradient.
//!
//! `E(φ) = w_dense·E_dense + w_lmk·E_lmk + w_reg·E_reg` with
//! `E_dense = Σ_{i∈V} ‖I(π(R·p_i + t)) − c_i‖₁ / |V|` over the rasterizer's
//! visible set V, bilinear image sampling, and `c_i` the SH-shaded vertex
//! color. The gradient is exact chain rule through shading (including vertex
//! normals), projection, image sampling, the axis-angle pose, and the
//! expression/albedo bases — with V held fixed, which is the sampling
//! scheme's subgradient approximation. `energy_with_visibility` exposes the
//! pinned-V energy so finite differences can check the same function the
//! gradient differentiates.

use nalgebra::{DVector, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{
    accumulate_face_normals, rotation_from_axis_angle, so3_right_jacobian, unflatten,
};

use super::raster::{project_vertices, rasterize_visible};
use super::sh::{sh_basis, sh_basis_grad, sh_shade_full};
use super::{EnergyBreakdown, EnergyWeights, Frame, TrackContext, TrackerState, FOCAL_SCALE};

/// Gradient of the energy over every tracker unknown. `pack()` matches
/// [`TrackerState::pack`], including the focal reparameterization.
#[derive(Debug, Clone)]
pub struct StateGrad {
    pub expr: DVector<f64>,
    pub albedo: DVector<f64>,
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
    pub sh: [[f64; 3]; 9],
    pub focal: f64,
}

impl StateGrad {
    pub fn pack(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        flat.extend(self.expr.iter());
        flat.extend(self.albedo.iter());
        flat.extend(self.rot.iter());
        flat.extend(self.trans.iter());
        for k in 0..9 {
            flat.extend_from_slice(&self.sh[k]);
        }
        flat.push(self.focal * FOCAL_SCALE);
        flat
    }
}

/// Shaded scene geometry for a state: everything the renderer and the energy
/// share, before any camera projection.
pub(crate) struct Scene {
    pub verts_model: Vec<Vector3<f64>>,
    /// Unit model-frame normals and the pre-normalization magnitudes.
    pub normals_model: Vec<Vector3<f64>>,
    pub m_norm: Vec<f64>,
    pub rot: Matrix3<f64>,
    pub verts_cam: Vec<Vector3<f64>>,
    pub albedo: Vec<Vector3<f64>>,
    pub colors: Vec<Vector3<f64>>,
    pub clamped: Vec<[bool; 3]>,
}

pub(crate) fn evaluate_scene(state: &TrackerState, ctx: &TrackContext) -> Result<Scene> {
    state.validate()?;
    if state.expr.len() != ctx.model.expr_dim() {
        return Err(Error::DimensionMismatch {
            what: "expression code",
            expected: ctx.model.expr_dim(),
            actual: state.expr.len(),
        });
    }
    let albedo_model = ctx.model.albedo().expect("checked in TrackContext::new");
    if state.albedo.len() != albedo_model.coeff_dim() {
        return Err(Error::DimensionMismatch {
            what: "albedo code",
            expected: albedo_model.coeff_dim(),
            actual: state.albedo.len(),
        });
    }
    let offsets = unflatten(&(ctx.model.expr_basis() * &state.expr));
    let verts_model: Vec<Vector3<f64>> = ctx
        .shape
        .vertices
        .iter()
        .zip(&offsets)
        .map(|(v, o)| v + o)
        .collect();
    let accum = accumulate_face_normals(&verts_model, ctx.model.faces());
    let mut normals_model = Vec::with_capacity(accum.len());
    let mut m_norm = Vec::with_capacity(accum.len());
    for m in &accum {
        let n = m.norm();
        if n > 0.0 {
            normals_model.push(m / n);
            m_norm.push(n);
        } else {
            normals_model.push(Vector3::z());
            m_norm.push(1.0);
        }
    }
    let rot = rotation_from_axis_angle(&state.rot);
    let verts_cam: Vec<Vector3<f64>> = verts_model.iter().map(|v| rot * v + state.trans).collect();
    let albedo = albedo_model.decode(&state.albedo)?;
    let mut colors = Vec::with_capacity(verts_model.len());
    let mut clamped = Vec::with_capacity(verts_model.len());
    for i in 0..verts_model.len() {
        let n_world = rot * normals_model[i];
        let (c, cl) = sh_shade_full(&n_world, &albedo[i], &state.sh);
        colors.push(c);
        clamped.push(cl);
    }
    Ok(Scene {
        verts_model,
        normals_model,
        m_norm,
        rot,
        verts_cam,
        albedo,
        colors,
        clamped,
    })
}

struct Evaluated {
    scene: Scene,
    projections: Vec<Option<(Vector2<f64>, f64)>>,
}

fn evaluate(state: &TrackerState, frame: &Frame, ctx: &TrackContext) -> Result<Evaluated> {
    frame.validate(ctx.model.vertex_count())?;
    let scene = evaluate_scene(state, ctx)?;
    let cam = ctx.camera(state.focal, frame.image.width, frame.image.height)?;
    let projections = project_vertices(&scene.verts_cam, &cam);
    Ok(Evaluated { scene, projections })
}

/// The visible set V for the current state, by z-buffer rasterization.
pub fn compute_visibility(
    state: &TrackerState,
    frame: &Frame,
    ctx: &TrackContext,
    eps_z: f64,
) -> Result<Vec<u32>> {
    let ev = evaluate(state, frame, ctx)?;
    let cam = ctx.camera(state.focal, frame.image.width, frame.image.height)?;
    let (visible, _, _) = rasterize_visible(&ev.scene.verts_cam, ctx.model.faces(), &cam, eps_z);
    Ok(visible)
}

/// Full energy: V is recomputed for the current state, then the pinned-V
/// energy is evaluated.
pub fn energy(
    state: &TrackerState,
    frame: &Frame,
    ctx: &TrackContext,
    weights: &EnergyWeights,
    eps_z: f64,
) -> Result<EnergyBreakdown> {
    let visible = compute_visibility(state, frame, ctx, eps_z)?;
    energy_with_visibility(state, frame, ctx, weights, &visible)
}

/// Energy with an externally fixed visible set — the exact function the
/// analytic gradient differentiates.
pub fn energy_with_visibility(
    state: &TrackerState,
    frame: &Frame,
    ctx: &TrackContext,
    weights: &EnergyWeights,
    visible: &[u32],
) -> Result<EnergyBreakdown> {
    let ev = evaluate(state, frame, ctx)?;
    assemble(&ev, state, frame, weights, visible).map(|(b, _)| b)
}

/// Energy and gradient at the current state's own visible set.
pub fn energy_grad(
    state: &TrackerState,
    frame: &Frame,
    ctx: &TrackContext,
    weights: &EnergyWeights,
    eps_z: f64,
) -> Result<(EnergyBreakdown, StateGrad)> {
    let visible = compute_visibility(state, frame, ctx, eps_z)?;
    energy_grad_with_visibility(state, frame, ctx, weights, &visible)
}

/// Energy and analytic gradient with V pinned.
pub fn energy_grad_with_visibility(
    state: &TrackerState,
    frame: &Frame,
    ctx: &TrackContext,
    weights: &EnergyWeights,
    visible: &[u32],
) -> Result<(EnergyBreakdown, StateGrad)> {
    let ev = evaluate(state, frame, ctx)?;
    let (breakdown, accum) = assemble(&ev, state, frame, weights, visible)?;
    let accum = accum.expect("gradient accumulators requested");
    Ok((breakdown, backward(&ev, state, ctx, weights, accum)))
}

/// Per-vertex adjoints collected during the forward pass.
struct Adjoints {
    /// dE/d(pixel position) per vertex.
    g_pixel: Vec<Vector2<f64>>,
    /// dE/d(vertex color) per vertex.
    g_color: Vec<Vector3<f64>>,
}

fn assemble(
    ev: &Evaluated,
    state: &TrackerState,
    frame: &Frame,
    weights: &EnergyWeights,
    visible: &[u32],
) -> Result<(EnergyBreakdown, Option<Adjoints>)> {
    let n = ev.scene.verts_model.len();
    let mut g_pixel = vec![Vector2::zeros(); n];
    let mut g_color = vec![Vector3::zeros(); n];

    // Dense photometric term. A zero weight disables it (used by the
    // landmark-only initialization stage); otherwise an empty V leaves the
    // term undefined, which must surface as an explicit error.
    let mut e_dense = 0.0;
    if weights.dense != 0.0 {
        if visible.is_empty() {
            return Err(Error::EmptyVisibleSet);
        }
        let w_dense = weights.dense / visible.len() as f64;
        for &vi in visible {
            let i = vi as usize;
            let Some((px, _)) = ev.projections[i] else {
                continue;
            };
            let (sample, [du, dv]) = frame.image.sample_bilinear_with_grad(px.x, px.y);
            let e = sample - ev.scene.colors[i];
            e_dense += e.x.abs() + e.y.abs() + e.z.abs();
            let s = e.map(sign0);
            g_pixel[i] += Vector2::new(w_dense * s.dot(&du), w_dense * s.dot(&dv));
            g_color[i] -= w_dense * s;
        }
        e_dense /= visible.len() as f64;
    }

    // Sparse landmark term.
    let mut e_lmk = 0.0;
    let mut lmk_terms: Vec<(usize, f64, Vector2<f64>)> = Vec::new();
    let mut l_count = 0usize;
    for l in &frame.landmarks {
        let i = l.vertex as usize;
        if let Some((px, _)) = ev.projections[i] {
            let d = px - l.px;
            e_lmk += l.conf * d.norm_squared();
            lmk_terms.push((i, l.conf, d));
            l_count += 1;
        }
    }
    if l_count > 0 {
        e_lmk /= l_count as f64;
        let w_lmk = weights.landmark / l_count as f64;
        for (i, conf, d) in lmk_terms {
            g_pixel[i] += w_lmk * conf * 2.0 * d;
        }
    }

    // Regularizer: deviation from the neutral state.
    let e_reg = state.expr.norm_squared() + weights.lambda_albedo * state.albedo.norm_squared();

    let total = weights.dense * e_dense + weights.landmark * e_lmk + weights.reg * e_reg;
    if !total.is_finite() {
        return Err(Error::NonFinite("tracking energy".into()));
    }
    Ok((
        EnergyBreakdown {
            dense: e_dense,
            landmark: e_lmk,
            reg: e_reg,
            total,
            weights: *weights,
            visible_count: visible.len(),
        },
        Some(Adjoints { g_pixel, g_color }),
    ))
}

/// L1 subgradient selection: residuals at (or numerically at) the kink get
/// slope zero. The deadzone sits far below 1/255, the finest photometric
/// signal a frame can carry.
fn sign0(x: f64) -> f64 {
    if x > 1e-12 {
        1.0
    } else if x < -1e-12 {
        -1.0
    } else {
        0.0
    }
}

fn backward(
    ev: &Evaluated,
    state: &TrackerState,
    ctx: &TrackContext,
    weights: &EnergyWeights,
    adj: Adjoints,
) -> StateGrad {
    let n = ev.scene.verts_model.len();
    let albedo_model = ctx.model.albedo().expect("checked in TrackContext::new");
    let rt = ev.scene.rot.transpose();
    let jr_t = so3_right_jacobian(&state.rot).transpose();
    let focal = state.focal;

    let mut g_vertex_model = vec![Vector3::zeros(); n];
    let mut g_normal_m = vec![Vector3::zeros(); n];
    let mut g_rot = Vector3::zeros();
    let mut g_trans = Vector3::zeros();
    let mut g_sh = [[0.0; 3]; 9];
    let mut g_focal = 0.0;
    let mut g_albedo = DVector::zeros(state.albedo.len());

    for i in 0..n {
        let gu = adj.g_pixel[i];
        if gu != Vector2::zeros() {
            let q = ev.scene.verts_cam[i];
            // ∂(pixel)/∂(camera point), pinhole.
            let inv_z = 1.0 / q.z;
            let g_q = Vector3::new(
                focal * inv_z * gu.x,
                focal * inv_z * gu.y,
                -focal * inv_z * inv_z * (q.x * gu.x + q.y * gu.y),
            );
            g_focal += q.x * inv_z * gu.x + q.y * inv_z * gu.y;
            g_trans += g_q;
            let back = rt * g_q;
            g_rot += jr_t * ev.scene.verts_model[i].cross(&back);
            g_vertex_model[i] += back;
        }

        let gc = adj.g_color[i];
        if gc != Vector3::zeros() {
            let n_world = ev.scene.rot * ev.scene.normals_model[i];
            let basis = sh_basis(&n_world);
            let grad_basis = sh_basis_grad(&n_world);
            let mut g_nw = Vector3::zeros();
            let mut g_alb_vertex = Vector3::zeros();
            for c in 0..3 {
                if ev.scene.clamped[i][c] || gc[c] == 0.0 {
                    continue;
                }
                let a_c = ev.scene.albedo[i][c];
                let mut irradiance = 0.0;
                for k in 0..9 {
                    g_sh[k][c] += gc[c] * a_c * basis[k];
                    irradiance += state.sh.0[k][c] * basis[k];
                    g_nw += gc[c] * a_c * state.sh.0[k][c] * grad_basis[k];
                }
                g_alb_vertex[c] = gc[c] * irradiance;
            }
            if g_alb_vertex != Vector3::zeros() {
                let rows = albedo_model.basis.rows(3 * i, 3);
                g_albedo += rows.transpose() * DVector::from_column_slice(g_alb_vertex.as_slice());
            }
            if g_nw != Vector3::zeros() {
                // Pose path: n_world = R·n_model.
                let back = rt * g_nw;
                g_rot += jr_t * ev.scene.normals_model[i].cross(&back);
                // Through the normalization: dE/dm = (I − n̂n̂ᵀ)(Rᵀ g) / ‖m‖.
                let nm = ev.scene.normals_model[i];
                g_normal_m[i] += (back - nm * nm.dot(&back)) / ev.scene.m_norm[i];
            }
        }
    }

    // Scatter normal adjoints to vertex positions through the cross-product
    // accumulation m_i = Σ_{f∋i} (b−a)×(c−a).
    for f in ctx.model.faces() {
        let (ia, ib, ic) = (f[0] as usize, f[1] as usize, f[2] as usize);
        let gq = g_normal_m[ia] + g_normal_m[ib] + g_normal_m[ic];
        if gq == Vector3::zeros() {
            continue;
        }
        let (va, vb, vc) = (ev.scene.verts_model[ia], ev.scene.verts_model[ib], ev.scene.verts_model[ic]);
        g_vertex_model[ia] += (vb - vc).cross(&gq);
        g_vertex_model[ib] += (vc - va).cross(&gq);
        g_vertex_model[ic] += (va - vb).cross(&gq);
    }

    // Expression: vertices are shape + Bexp·ψ.
    let mut g_flat = DVector::zeros(3 * n);
    for (i, g) in g_vertex_model.iter().enumerate() {
        g_flat[3 * i] = g.x;
        g_flat[3 * i + 1] = g.y;
        g_flat[3 * i + 2] = g.z;
    }
    let mut g_expr = ctx.model.expr_basis().transpose() * g_flat;

    // Regularizer.
    g_expr += weights.reg * 2.0 * &state.expr;
    g_albedo += weights.reg * weights.lambda_albedo * 2.0 * &state.albedo;

    StateGrad {
        expr: g_expr,
        albedo: g_albedo,
        rot: g_rot,
        trans: g_trans,
        sh: g_sh,
        focal: g_focal,
    }
}
