//! Classical z-buffer rasterization at pixel resolution: the visibility test
//! behind the sampling-based differentiable renderer, plus a full-image
//! Gouraud renderer used for RMSE evaluation and synthetic data.

use nalgebra::{Vector2, Vector3};

use crate::geometry::Camera;
use crate::io::{DepthMap, RgbImage};

/// Triangles closer than this to the camera plane are skipped (no near-plane
/// clipping at desk scale).
const NEAR: f64 = 1e-6;

/// Depth buffer over the image; `f64::INFINITY` marks uncovered pixels.
pub struct ZBuffer {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
}

impl ZBuffer {
    fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; (width * height) as usize],
        }
    }

    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.depth[(y * self.width + x) as usize]
    }

    pub fn covered(&self, x: u32, y: u32) -> bool {
        self.at(x, y).is_finite()
    }
}

/// Camera-space projections and depths, `None` for points behind the camera.
pub fn project_vertices(
    verts_cam: &[Vector3<f64>],
    cam: &Camera,
) -> Vec<Option<(Vector2<f64>, f64)>> {
    verts_cam
        .iter()
        .map(|v| cam.project(v).map(|px| (px, v.z)))
        .collect()
}

/// Walks every covered pixel of every renderable triangle. The callback gets
/// pixel coordinates, the perspective-correct depth, the face index, and the
/// screen-space barycentric weights.
fn for_each_covered_pixel(
    projections: &[Option<(Vector2<f64>, f64)>],
    faces: &[[u32; 3]],
    width: u32,
    height: u32,
    mut visit: impl FnMut(u32, u32, f64, usize, [f64; 3]),
) {
    for (fi, face) in faces.iter().enumerate() {
        let Some([(pa, za), (pb, zb), (pc, zc)]) = face_projection(projections, face) else {
            continue;
        };
        if za <= NEAR || zb <= NEAR || zc <= NEAR {
            continue;
        }
        let area = edge(&pa, &pb, &pc);
        if area == 0.0 {
            continue;
        }
        let min_x = pa.x.min(pb.x).min(pc.x).floor().max(0.0) as i64;
        let max_x = (pa.x.max(pb.x).max(pc.x).ceil() as i64).min(width as i64 - 1);
        let min_y = pa.y.min(pb.y).min(pc.y).floor().max(0.0) as i64;
        let max_y = (pa.y.max(pb.y).max(pc.y).ceil() as i64).min(height as i64 - 1);
        for py in min_y..=max_y {
            for px in min_x..=max_x {
                let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                // Signed-area barycentrics; division by the signed total
                // handles both windings.
                let w0 = edge(&pb, &pc, &p) / area;
                let w1 = edge(&pc, &pa, &p) / area;
                let w2 = edge(&pa, &pb, &p) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // Perspective-correct depth: 1/z interpolates linearly in
                // screen space.
                let inv_z = w0 / za + w1 / zb + w2 / zc;
                visit(px as u32, py as u32, 1.0 / inv_z, fi, [w0, w1, w2]);
            }
        }
    }
}

type FaceProjection = [(Vector2<f64>, f64); 3];

fn face_projection(
    projections: &[Option<(Vector2<f64>, f64)>],
    face: &[u32; 3],
) -> Option<FaceProjection> {
    Some([
        projections[face[0] as usize]?,
        projections[face[1] as usize]?,
        projections[face[2] as usize]?,
    ])
}

fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Depth-only rasterization.
pub fn rasterize_depth(
    verts_cam: &[Vector3<f64>],
    faces: &[[u32; 3]],
    cam: &Camera,
) -> (ZBuffer, Vec<Option<(Vector2<f64>, f64)>>) {
    let projections = project_vertices(verts_cam, cam);
    let mut zbuf = ZBuffer::new(cam.width(), cam.height());
    for_each_covered_pixel(&projections, faces, cam.width(), cam.height(), |x, y, z, _, _| {
        let idx = (y * cam.width() + x) as usize;
        if z < zbuf.depth[idx] {
            zbuf.depth[idx] = z;
        }
    });
    (zbuf, projections)
}

/// The visible set V: vertices whose projection lands inside the image and
/// whose depth passes the z-buffer test at their pixel with relative slack
/// `eps_z` (`z ≤ zbuf + eps_z·z`, so the tolerance is scale-invariant).
/// Deterministic for fixed inputs; an empty V is allowed and left to the
/// caller to flag.
pub fn rasterize_visible(
    verts_cam: &[Vector3<f64>],
    faces: &[[u32; 3]],
    cam: &Camera,
    eps_z: f64,
) -> (Vec<u32>, ZBuffer, Vec<Option<(Vector2<f64>, f64)>>) {
    let (zbuf, projections) = rasterize_depth(verts_cam, faces, cam);
    let mut visible = Vec::new();
    for (i, proj) in projections.iter().enumerate() {
        let Some((px, z)) = proj else { continue };
        if z <= &NEAR || !cam.contains(px) {
            continue;
        }
        let (xi, yi) = (px.x.floor() as u32, px.y.floor() as u32);
        if *z <= zbuf.at(xi, yi) + eps_z * z {
            visible.push(i as u32);
        }
    }
    (visible, zbuf, projections)
}

/// Full-image render with per-vertex colors interpolated perspective-correct
/// across triangles, plus the camera-space depth map (0 where uncovered).
pub fn render_colored(
    verts_cam: &[Vector3<f64>],
    faces: &[[u32; 3]],
    colors: &[Vector3<f64>],
    cam: &Camera,
    background: Vector3<f64>,
) -> (RgbImage, DepthMap) {
    let projections = project_vertices(verts_cam, cam);
    let mut zbuf = ZBuffer::new(cam.width(), cam.height());
    let mut image = RgbImage::filled(cam.width(), cam.height(), background);
    let mut depth = DepthMap::empty(cam.width(), cam.height());
    for_each_covered_pixel(&projections, faces, cam.width(), cam.height(), |x, y, z, fi, w| {
        let idx = (y * cam.width() + x) as usize;
        if z < zbuf.depth[idx] {
            zbuf.depth[idx] = z;
            let f = faces[fi];
            let (za, zb, zc) = (
                verts_cam[f[0] as usize].z,
                verts_cam[f[1] as usize].z,
                verts_cam[f[2] as usize].z,
            );
            // Perspective-correct attribute interpolation.
            let c = (colors[f[0] as usize] * (w[0] / za)
                + colors[f[1] as usize] * (w[1] / zb)
                + colors[f[2] as usize] * (w[2] / zc))
                * z;
            image.set_pixel(x, y, c);
            depth.set_depth(x, y, z);
        }
    });
    (image, depth)
}

/// Brute-force visibility oracle: a vertex is visible iff, along the ray
/// through its pixel's center, no triangle is nearer than the vertex by more
/// than the relative slack `eps_z·z`. Evaluates the same geometric predicate
/// as the rasterizer by independent means (3D ray casting instead of 2D
/// coverage).
pub fn visible_by_ray_cast(
    verts_cam: &[Vector3<f64>],
    faces: &[[u32; 3]],
    cam: &Camera,
    eps_z: f64,
) -> Vec<u32> {
    let mut visible = Vec::new();
    for (i, v) in verts_cam.iter().enumerate() {
        let Some(px) = cam.project(v) else { continue };
        if v.z <= NEAR || !cam.contains(&px) {
            continue;
        }
        let center = Vector2::new(px.x.floor() + 0.5, px.y.floor() + 0.5);
        let (cx, cy) = cam.principal_point();
        // Direction with unit z: the intersection parameter is camera depth.
        let dir = Vector3::new((center.x - cx) / cam.focal(), (center.y - cy) / cam.focal(), 1.0);
        let mut nearest = f64::INFINITY;
        for f in faces {
            let (a, b, c) = (
                verts_cam[f[0] as usize],
                verts_cam[f[1] as usize],
                verts_cam[f[2] as usize],
            );
            if a.z <= NEAR || b.z <= NEAR || c.z <= NEAR {
                continue;
            }
            if let Some(t) = ray_triangle_depth(&dir, &a, &b, &c) {
                nearest = nearest.min(t);
            }
        }
        if v.z <= nearest + eps_z * v.z {
            visible.push(i as u32);
        }
    }
    visible
}

/// Möller–Trumbore from the origin along `dir` (unit-z direction, so the
/// returned parameter is camera-space depth). Inclusive boundaries.
fn ray_triangle_depth(
    dir: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = -a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > NEAR).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn test_cam() -> Camera {
        Camera::new(200.0, 64.0, 64.0, 128, 128).unwrap()
    }

    /// Two triangles spanning a quad facing the camera at depth `z`, extent
    /// `half` in x/y.
    fn quad(z: f64, half: f64) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
        let v = vec![
            Vector3::new(-half, -half, z),
            Vector3::new(half, -half, z),
            Vector3::new(half, half, z),
            Vector3::new(-half, half, z),
        ];
        (v, vec![[0, 1, 2], [0, 2, 3]])
    }

    #[test]
    fn front_quad_occludes_back_quad() {
        let cam = test_cam();
        // Front quad spans ±48 px, back quad ±25 px: the back corners project
        // strictly inside the front coverage.
        let (mut verts, mut faces) = quad(0.5, 0.12);
        let (back_v, back_f) = quad(0.8, 0.1);
        let off = verts.len() as u32;
        verts.extend(back_v);
        faces.extend(back_f.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        let (visible, _, _) = rasterize_visible(&verts, &faces, &cam, 1e-3);
        assert_eq!(visible, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_front_facing_triangle_is_fully_visible() {
        let cam = test_cam();
        let verts = vec![
            Vector3::new(-0.14, -0.14, 0.5),
            Vector3::new(0.14, -0.14, 0.5),
            Vector3::new(0.0, 0.14, 0.5),
        ];
        let (visible, _, _) = rasterize_visible(&verts, &[[0, 1, 2]], &cam, 1e-3);
        assert_eq!(visible, vec![0, 1, 2]);
    }

    #[test]
    fn rasterizer_visibility_matches_ray_cast_oracle() {
        // 100 random triangles in front of the camera.
        let cam = test_cam();
        let mut rng = StdRng::seed_from_u64(140);
        let mut verts = Vec::new();
        let mut faces = Vec::new();
        for i in 0..100u32 {
            let center = Vector3::new(
                (rng.random::<f64>() - 0.5) * 0.4,
                (rng.random::<f64>() - 0.5) * 0.4,
                0.4 + rng.random::<f64>() * 0.6,
            );
            for _ in 0..3 {
                verts.push(
                    center
                        + Vector3::new(
                            (rng.random::<f64>() - 0.5) * 0.15,
                            (rng.random::<f64>() - 0.5) * 0.15,
                            (rng.random::<f64>() - 0.5) * 0.15,
                        ),
                );
            }
            faces.push([3 * i, 3 * i + 1, 3 * i + 2]);
        }
        let eps = 1e-3;
        let (visible, _, _) = rasterize_visible(&verts, &faces, &cam, eps);
        let oracle = visible_by_ray_cast(&verts, &faces, &cam, eps);
        assert_eq!(visible, oracle);
    }

    #[test]
    fn behind_camera_vertices_are_never_visible() {
        let cam = test_cam();
        let verts = vec![
            Vector3::new(0.0, 0.0, -0.5),
            Vector3::new(0.1, 0.0, -0.5),
            Vector3::new(0.0, 0.1, -0.5),
        ];
        let (visible, _, _) = rasterize_visible(&verts, &[[0, 1, 2]], &cam, 1e-3);
        assert!(visible.is_empty());
    }

    #[test]
    fn render_fills_interior_with_interpolated_color_and_depth() {
        let cam = test_cam();
        let (verts, faces) = quad(0.5, 0.12);
        let colors = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let (img, depth) = render_colored(&verts, &faces, &colors, &cam, Vector3::zeros());
        // Center pixel is covered at depth 0.5.
        assert!((depth.depth(64, 64) - 0.5).abs() < 1e-9);
        let c = img.pixel(64, 64);
        assert!(c.norm() > 0.0);
        // Far corner is background.
        assert_eq!(img.pixel(0, 0), Vector3::zeros());
        assert!(!depth.has_depth(0, 0));
    }
}
