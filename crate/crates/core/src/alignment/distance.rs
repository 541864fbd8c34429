//! Exact point-to-surface distances, accelerated by a bounding-volume
//! hierarchy. The accelerated result is identical to brute force over all
//! triangles: the BVH only prunes candidates, the per-triangle computation is
//! shared.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Mesh;

use super::ScanCloud;

/// Closest point to `p` on triangle `(a, b, c)`, via the Voronoi-region case
/// analysis.
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Barycentric coordinates of a point assumed to lie in the triangle's
/// plane (e.g. a closest-point result), clamped to the simplex.
pub fn barycentric_coordinates(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> [f64; 3] {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    if denom.abs() < 1e-300 {
        return [1.0, 0.0, 0.0];
    }
    let v = ((d11 * d20 - d01 * d21) / denom).clamp(0.0, 1.0);
    let w = ((d00 * d21 - d01 * d20) / denom).clamp(0.0, 1.0 - v);
    [1.0 - v - w, v, w]
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    /// Squared distance from `p` to the box (zero inside).
    fn dist_sq(&self, p: &Vector3<f64>) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = p[i];
            if v < self.min[i] {
                d += (self.min[i] - v) * (self.min[i] - v);
            } else if v > self.max[i] {
                d += (v - self.max[i]) * (v - self.max[i]);
            }
        }
        d
    }
}

enum Node {
    Leaf {
        aabb: Aabb,
        triangles: Vec<u32>,
    },
    Inner {
        aabb: Aabb,
        left: u32,
        right: u32,
    },
}

/// Static BVH over a mesh's triangles for nearest-surface-point queries.
pub struct TriangleBvh {
    nodes: Vec<Node>,
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    root: u32,
}

const LEAF_SIZE: usize = 4;

impl TriangleBvh {
    pub fn build(mesh: &Mesh) -> Result<Self> {
        if mesh.faces.is_empty() {
            return Err(Error::invalid("cannot build a surface index over a mesh with no faces"));
        }
        let centroids: Vec<Vector3<f64>> = mesh
            .faces
            .iter()
            .map(|f| {
                (mesh.vertices[f[0] as usize]
                    + mesh.vertices[f[1] as usize]
                    + mesh.vertices[f[2] as usize])
                    / 3.0
            })
            .collect();
        let mut bvh = Self {
            nodes: Vec::with_capacity(mesh.faces.len() * 2),
            vertices: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            root: 0,
        };
        let mut indices: Vec<u32> = (0..mesh.faces.len() as u32).collect();
        bvh.root = bvh.build_node(&mut indices, &centroids);
        Ok(bvh)
    }

    fn triangle_aabb(&self, tri: u32) -> Aabb {
        let f = self.faces[tri as usize];
        let mut aabb = Aabb::empty();
        for &i in &f {
            aabb.grow(&self.vertices[i as usize]);
        }
        aabb
    }

    fn build_node(&mut self, indices: &mut [u32], centroids: &[Vector3<f64>]) -> u32 {
        let mut aabb = Aabb::empty();
        for &t in indices.iter() {
            aabb.merge(&self.triangle_aabb(t));
        }
        if indices.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                aabb,
                triangles: indices.to_vec(),
            });
            return (self.nodes.len() - 1) as u32;
        }
        // Median split along the widest centroid axis.
        let mut cmin = Vector3::repeat(f64::INFINITY);
        let mut cmax = Vector3::repeat(f64::NEG_INFINITY);
        for &t in indices.iter() {
            cmin = cmin.inf(&centroids[t as usize]);
            cmax = cmax.sup(&centroids[t as usize]);
        }
        let extent = cmax - cmin;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = indices.len() / 2;
        indices.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .partial_cmp(&centroids[b as usize][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let (left_idx, right_idx) = indices.split_at_mut(mid);
        let left = self.build_node(left_idx, centroids);
        let right = self.build_node(right_idx, centroids);
        self.nodes.push(Node::Inner { aabb, left, right });
        (self.nodes.len() - 1) as u32
    }

    /// Closest surface point to `p`, its squared distance, and the triangle
    /// index it lies on.
    pub fn closest_point(&self, p: &Vector3<f64>) -> (Vector3<f64>, f64, u32) {
        let mut best_sq = f64::INFINITY;
        let mut best_point = Vector3::zeros();
        let mut best_tri = 0u32;
        let mut stack = vec![self.root];
        while let Some(idx) = stack.pop() {
            match &self.nodes[idx as usize] {
                Node::Leaf { aabb, triangles } => {
                    if aabb.dist_sq(p) >= best_sq {
                        continue;
                    }
                    for &t in triangles {
                        let f = self.faces[t as usize];
                        let cp = closest_point_on_triangle(
                            p,
                            &self.vertices[f[0] as usize],
                            &self.vertices[f[1] as usize],
                            &self.vertices[f[2] as usize],
                        );
                        let d = (p - cp).norm_squared();
                        if d < best_sq {
                            best_sq = d;
                            best_point = cp;
                            best_tri = t;
                        }
                    }
                }
                Node::Inner { aabb, left, right } => {
                    if aabb.dist_sq(p) >= best_sq {
                        continue;
                    }
                    // Visit the nearer child first for tighter pruning.
                    let (dl, dr) = (
                        self.node_aabb(*left).dist_sq(p),
                        self.node_aabb(*right).dist_sq(p),
                    );
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        (best_point, best_sq, best_tri)
    }

    fn node_aabb(&self, idx: u32) -> &Aabb {
        match &self.nodes[idx as usize] {
            Node::Leaf { aabb, .. } => aabb,
            Node::Inner { aabb, .. } => aabb,
        }
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }
}

/// Exact distance from each masked scan point to the mesh surface, in
/// millimeters. Direction is scan → mesh: every reference point is charged
/// its distance to the predicted surface.
pub fn scan_to_mesh_distance_mm(scan: &ScanCloud, mesh: &Mesh) -> Result<Vec<f64>> {
    let indices = scan.masked_indices();
    if indices.is_empty() {
        return Err(Error::invalid("face mask selects no scan points"));
    }
    let bvh = TriangleBvh::build(mesh)?;
    Ok(indices
        .iter()
        .map(|&i| bvh.closest_point(&scan.points[i]).1.sqrt() * 1000.0)
        .collect())
}
