//! First-frame initialization, sequential tracking, and RMSE evaluation.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{DepthMap, RgbImage};
use crate::opt::AdamW;

use super::energy::{energy_grad_with_visibility, energy_with_visibility, evaluate_scene};
use super::raster::{rasterize_visible, render_colored};
use super::{EnergyBreakdown, EnergyWeights, Frame, TrackContext, TrackerState};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackOptions {
    pub weights: EnergyWeights,
    /// Relative depth-test tolerance of the visibility rasterizer
    /// (fraction of vertex depth).
    pub eps_z: f64,
    /// Focal length used before the first-frame solve refines it (pixels).
    pub init_focal: f64,
    /// Stage-1 iterations on the landmark term only (pose + focal).
    pub landmark_iterations: usize,
    pub first_frame_iterations: usize,
    pub frame_iterations: usize,
    pub first_frame_lr: f64,
    pub frame_lr: f64,
    /// In-frame exponential learning-rate decay: the last iteration runs at
    /// `lr · lr_end_factor`.
    pub lr_end_factor: f64,
    pub optimize_focal: bool,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            eps_z: 2e-3,
            init_focal: 500.0,
            landmark_iterations: 300,
            first_frame_iterations: 300,
            frame_iterations: 50,
            first_frame_lr: 1e-2,
            frame_lr: 5e-3,
            lr_end_factor: 0.01,
            optimize_focal: true,
        }
    }
}

/// Which parameter blocks an optimization pass may move.
#[derive(Debug, Clone, Copy)]
struct FreeBlocks {
    expr: bool,
    albedo: bool,
    pose: bool,
    sh: bool,
    focal: bool,
}

fn freeze_mask(state: &TrackerState, free: FreeBlocks) -> Vec<bool> {
    let mut mask = Vec::with_capacity(state.param_count());
    mask.extend(std::iter::repeat_n(free.expr, state.expr.len()));
    mask.extend(std::iter::repeat_n(free.albedo, state.albedo.len()));
    mask.extend(std::iter::repeat_n(free.pose, 6));
    mask.extend(std::iter::repeat_n(free.sh, 27));
    mask.push(free.focal);
    mask
}

/// Evaluates the energy at the state's own visible set; a zero dense weight
/// skips rasterization entirely (used by the landmark-only stage).
fn eval_energy(
    state: &TrackerState,
    frame: &Frame,
    ctx: &TrackContext,
    weights: &EnergyWeights,
    eps_z: f64,
) -> Result<EnergyBreakdown> {
    let visible = current_visibility(state, frame, ctx, weights, eps_z)?;
    energy_with_visibility(state, frame, ctx, weights, &visible)
}

fn current_visibility(
    state: &TrackerState,
    frame: &Frame,
    ctx: &TrackContext,
    weights: &EnergyWeights,
    eps_z: f64,
) -> Result<Vec<u32>> {
    if weights.dense == 0.0 {
        return Ok(Vec::new());
    }
    let scene = evaluate_scene(state, ctx)?;
    let cam = ctx.camera(state.focal, frame.image.width, frame.image.height)?;
    let (visible, _, _) = rasterize_visible(&scene.verts_cam, ctx.model.faces(), &cam, eps_z);
    Ok(visible)
}

/// Adam descent on the unfrozen blocks with in-frame learning-rate decay.
/// Returns the best state seen, its breakdown, and the best-so-far history
/// (non-increasing by construction).
fn optimize(
    state: &mut TrackerState,
    frame: &Frame,
    ctx: &TrackContext,
    weights: &EnergyWeights,
    eps_z: f64,
    iterations: usize,
    lr: f64,
    lr_end_factor: f64,
    free: FreeBlocks,
) -> Result<(EnergyBreakdown, Vec<f64>)> {
    let mask = freeze_mask(state, free);
    let mut params = state.pack();
    let mut opt = AdamW::adam(lr, params.len());

    let mut best_breakdown = eval_energy(state, frame, ctx, weights, eps_z)?;
    let mut best_params = params.clone();
    let mut history = vec![best_breakdown.total];

    for it in 0..iterations {
        let visible = current_visibility(state, frame, ctx, weights, eps_z)?;
        if weights.dense != 0.0 && visible.is_empty() {
            break; // revert to best below
        }
        let (breakdown, grad) = energy_grad_with_visibility(state, frame, ctx, weights, &visible)?;
        if breakdown.total < best_breakdown.total {
            best_breakdown = breakdown;
            best_params = params.clone();
        }
        history.push(best_breakdown.total);

        let mut g = grad.pack();
        for (gi, &m) in g.iter_mut().zip(&mask) {
            if !m {
                *gi = 0.0;
            }
        }
        let t = if iterations > 1 {
            it as f64 / (iterations - 1) as f64
        } else {
            0.0
        };
        opt.learning_rate = lr * lr_end_factor.powf(t);
        opt.step(&mut params, &g, None);
        state.unpack(&params);
        state.canonicalize();
        params = state.pack();
    }
    // The last step's state has not been scored yet.
    if let Ok(breakdown) = eval_energy(state, frame, ctx, weights, eps_z) {
        if breakdown.total < best_breakdown.total {
            best_breakdown = breakdown;
            best_params = params;
        }
    }
    history.push(best_breakdown.total);
    state.unpack(&best_params);
    Ok((best_breakdown, history))
}

/// Stage 1 + stage 2 initialization on the first frame.
///
/// Stage 1 solves pose and focal length from the landmark term alone,
/// starting from a similar-triangles depth estimate. Stage 2 jointly
/// optimizes albedo, illumination, expression, pose, and focal length on the
/// full energy. The returned state is the one whose albedo stays frozen for
/// the rest of the sequence.
pub fn init_first_frame(
    frame: &Frame,
    ctx: &TrackContext,
    opts: &TrackOptions,
) -> Result<TrackerState> {
    if frame.landmarks.len() < 4 {
        return Err(Error::Degenerate(format!(
            "first-frame initialization needs ≥4 landmarks, got {}",
            frame.landmarks.len()
        )));
    }
    frame.validate(ctx.model.vertex_count())?;

    // Similar-triangles depth: 3D landmark spread vs pixel spread.
    let pts3: Vec<Vector3<f64>> = frame
        .landmarks
        .iter()
        .map(|l| ctx.shape.vertices[l.vertex as usize])
        .collect();
    let px: Vec<Vector2<f64>> = frame.landmarks.iter().map(|l| l.px).collect();
    let c3 = pts3.iter().sum::<Vector3<f64>>() / pts3.len() as f64;
    let c2 = px.iter().sum::<Vector2<f64>>() / px.len() as f64;
    let spread3 = (pts3.iter().map(|p| (p - c3).norm_squared()).sum::<f64>() / pts3.len() as f64).sqrt();
    let spread2 = (px.iter().map(|p| (p - c2).norm_squared()).sum::<f64>() / px.len() as f64).sqrt();
    if spread2 < 1e-9 || spread3 < 1e-12 {
        return Err(Error::Degenerate("landmarks are coincident".into()));
    }
    let z0 = (opts.init_focal * spread3 / spread2).max(1e-2);
    // Place the 3D centroid on the ray through the 2D centroid.
    let qc = Vector3::new(
        (c2.x - ctx.cx) / opts.init_focal * z0,
        (c2.y - ctx.cy) / opts.init_focal * z0,
        z0,
    );
    let mut state = ctx.neutral_state(opts.init_focal, z0);
    state.trans = qc - c3;
    state.canonicalize();

    // Stage 1: perspective-n-point style pose from landmarks only.
    let lmk_weights = EnergyWeights {
        dense: 0.0,
        landmark: 1.0,
        reg: 0.0,
        ..opts.weights
    };
    optimize(
        &mut state,
        frame,
        ctx,
        &lmk_weights,
        opts.eps_z,
        opts.landmark_iterations,
        opts.first_frame_lr,
        opts.lr_end_factor,
        FreeBlocks {
            expr: false,
            albedo: false,
            pose: true,
            sh: false,
            focal: opts.optimize_focal,
        },
    )?;

    // Stage 2: joint refinement of everything on the full energy.
    optimize(
        &mut state,
        frame,
        ctx,
        &opts.weights,
        opts.eps_z,
        opts.first_frame_iterations,
        opts.first_frame_lr,
        opts.lr_end_factor,
        FreeBlocks {
            expr: true,
            albedo: true,
            pose: true,
            sh: true,
            focal: opts.optimize_focal,
        },
    )?;
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct TrackedFrame {
    pub state: TrackerState,
    /// Absent when the frame was flagged for an empty visible set.
    pub energy: Option<EnergyBreakdown>,
    pub flagged_empty: bool,
    /// Best-so-far total energy per optimizer iteration.
    pub energy_history: Vec<f64>,
}

/// Tracks a sequence: the first frame runs the two-stage initialization,
/// every later frame warm-starts from its predecessor with albedo and focal
/// length frozen. Deterministic for fixed inputs and options.
pub fn track(
    frames: &[Frame],
    ctx: &TrackContext,
    opts: &TrackOptions,
) -> Result<Vec<TrackedFrame>> {
    if frames.is_empty() {
        return Err(Error::invalid("cannot track an empty sequence"));
    }
    let mut out = Vec::with_capacity(frames.len());
    let mut state = init_first_frame(&frames[0], ctx, opts)?;
    let first_energy = eval_energy(&state, &frames[0], ctx, &opts.weights, opts.eps_z)?;
    out.push(TrackedFrame {
        state: state.clone(),
        energy: Some(first_energy),
        flagged_empty: false,
        energy_history: vec![first_energy.total],
    });

    for frame in &frames[1..] {
        let mut next = state.clone();
        let result = optimize(
            &mut next,
            frame,
            ctx,
            &opts.weights,
            opts.eps_z,
            opts.frame_iterations,
            opts.frame_lr,
            opts.lr_end_factor,
            FreeBlocks {
                expr: true,
                albedo: false,
                pose: true,
                sh: true,
                focal: false,
            },
        );
        match result {
            Ok((breakdown, history)) => {
                state = next;
                out.push(TrackedFrame {
                    state: state.clone(),
                    energy: Some(breakdown),
                    flagged_empty: false,
                    energy_history: history,
                });
            }
            Err(Error::EmptyVisibleSet) => {
                // Flag the frame and carry the previous state forward.
                out.push(TrackedFrame {
                    state: state.clone(),
                    energy: None,
                    flagged_empty: true,
                    energy_history: Vec::new(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Full-image render of a state (Gouraud-interpolated vertex colors) plus the
/// camera-space depth map. Used for RMSE evaluation, synthetic data, and
/// debugging output — the energy itself only samples at vertex projections.
pub fn render_state(
    state: &TrackerState,
    ctx: &TrackContext,
    width: u32,
    height: u32,
    background: Vector3<f64>,
) -> Result<(RgbImage, DepthMap)> {
    let scene = evaluate_scene(state, ctx)?;
    let cam = ctx.camera(state.focal, width, height)?;
    Ok(render_colored(
        &scene.verts_cam,
        ctx.model.faces(),
        &scene.colors,
        &cam,
        background,
    ))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrameRmse {
    /// RMSE over rendered-face pixels, RGB in [0, 255].
    pub photometric_255: f64,
    /// RMSE in meters over pixels where rendered and reference depth both
    /// exist; absent when the frame has no reference depth.
    pub depth_m: Option<f64>,
}

/// Photometric and depth RMSE of tracked states against their frames.
pub fn eval_rmse(
    states: &[TrackerState],
    frames: &[Frame],
    ctx: &TrackContext,
) -> Result<Vec<FrameRmse>> {
    if states.len() != frames.len() {
        return Err(Error::DimensionMismatch {
            what: "states vs frames",
            expected: frames.len(),
            actual: states.len(),
        });
    }
    let mut out = Vec::with_capacity(states.len());
    for (state, frame) in states.iter().zip(frames) {
        let (rendered, depth) =
            render_state(state, ctx, frame.image.width, frame.image.height, Vector3::zeros())?;
        let mut photo_sq = 0.0;
        let mut photo_n = 0usize;
        let mut depth_sq = 0.0;
        let mut depth_n = 0usize;
        for y in 0..frame.image.height {
            for x in 0..frame.image.width {
                if !depth.has_depth(x, y) {
                    continue;
                }
                let d = (rendered.pixel(x, y) - frame.image.pixel(x, y)) * 255.0;
                photo_sq += d.norm_squared();
                photo_n += 3;
                if let Some(ref_depth) = &frame.depth {
                    if ref_depth.has_depth(x, y) {
                        let dd = depth.depth(x, y) - ref_depth.depth(x, y);
                        depth_sq += dd * dd;
                        depth_n += 1;
                    }
                }
            }
        }
        if photo_n == 0 {
            return Err(Error::invalid("no rendered face pixels to evaluate"));
        }
        let depth_m = if frame.depth.is_some() {
            if depth_n == 0 {
                return Err(Error::invalid(
                    "reference depth present but no overlapping pixels",
                ));
            }
            Some((depth_sq / depth_n as f64).sqrt())
        } else {
            None
        };
        out.push(FrameRmse {
            photometric_255: (photo_sq / photo_n as f64).sqrt(),
            depth_m,
        });
    }
    Ok(out)
}


#[cfg(test)]
mod debug_init {
    use super::*;
    use super::tests::*;

    #[test]
    #[ignore]
    fn diagnose() {
        let model = crate::testutil::sphere_model_with_albedo(160, 5);
        let shape = model.mean_mesh();
        let ctx = TrackContext::new(&shape, &model, 48.0, 48.0).unwrap();
        let gt = ground_truth_state(&model);
        let frame = synth_frame(&gt, &ctx);
        let opts = test_options();

        let eval_lmk = |state: &TrackerState| {
            let scene = super::energy::evaluate_scene(state, &ctx).unwrap();
            let cam = ctx.camera(state.focal, 96, 96).unwrap();
            let mut worst: f64 = 0.0;
            for l in &frame.landmarks {
                let px = cam.project(&scene.verts_cam[l.vertex as usize]).unwrap();
                worst = worst.max((px - l.px).norm());
            }
            worst
        };
        let e_at = |state: &TrackerState| {
            super::energy::energy(state, &frame, &ctx, &opts.weights, opts.eps_z).unwrap()
        };
        eprintln!("gt energy: {:?}", e_at(&gt));
        eprintln!("gt lmk residual: {}", eval_lmk(&gt));

        let state = init_first_frame(&frame, &ctx, &opts).unwrap();
        eprintln!("recovered energy: {:?}", e_at(&state));
        eprintln!("recovered lmk residual: {}", eval_lmk(&state));
        eprintln!("gt trans {:?} rec trans {:?}", gt.trans, state.trans);
        eprintln!("gt focal {} rec focal {}", gt.focal, state.focal);
        eprintln!("gt rot {:?} rec rot {:?}", gt.rot, state.rot);
    }
}
