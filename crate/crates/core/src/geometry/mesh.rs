use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Triangle mesh with `f64` vertices in meters and optional per-vertex albedo
/// (RGB in `[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub albedo: Option<Vec<Vector3<f64>>>,
}

impl Mesh {
    /// Builds a mesh, checking that face indices are in range and vertex
    /// coordinates are finite.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for (i, v) in vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(Error::invalid(format!("vertex {i} has non-finite coordinates")));
            }
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&idx| idx >= n) {
                return Err(Error::invalid(format!(
                    "face {i} references vertex out of range (N = {n})"
                )));
            }
        }
        Ok(Self {
            vertices,
            faces,
            albedo: None,
        })
    }

    pub fn with_albedo(mut self, albedo: Vec<Vector3<f64>>) -> Result<Self> {
        if albedo.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                what: "per-vertex albedo",
                expected: self.vertices.len(),
                actual: albedo.len(),
            });
        }
        self.albedo = Some(albedo);
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Rejects degenerate (zero-area) triangles. Model templates must pass
    /// this; scan-derived meshes need not.
    pub fn validate_template(&self) -> Result<()> {
        for (i, f) in self.faces.iter().enumerate() {
            let a = self.vertices[f[0] as usize];
            let b = self.vertices[f[1] as usize];
            let c = self.vertices[f[2] as usize];
            if (b - a).cross(&(c - a)).norm() <= 0.0 {
                return Err(Error::invalid(format!("face {i} is degenerate (zero area)")));
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for v in &self.vertices {
            c += v;
        }
        c / self.vertices.len().max(1) as f64
    }

    /// Unique undirected edges, each as an ordered index pair.
    pub fn edges(&self) -> Vec<[u32; 2]> {
        let mut edges: Vec<[u32; 2]> = Vec::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.push(if a < b { [a, b] } else { [b, a] });
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        vertex_normals(self)
    }
}

/// Per-vertex unit normals as the area-weighted average of incident face
/// normals. The unnormalized face cross product is proportional to face area,
/// so summing raw cross products gives the weighting for free. Isolated
/// vertices default to +z.
pub fn vertex_normals(mesh: &Mesh) -> Vec<Vector3<f64>> {
    accumulate_face_normals(&mesh.vertices, &mesh.faces)
        .into_iter()
        .map(|m| {
            let n = m.norm();
            if n > 0.0 {
                m / n
            } else {
                Vector3::new(0.0, 0.0, 1.0)
            }
        })
        .collect()
}

/// Unnormalized normal accumulators `m_i = Σ_{f ∋ i} (b−a)×(c−a)`. Exposed
/// separately because the tracker differentiates shading through these.
pub fn accumulate_face_normals(vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for f in faces {
        let a = vertices[f[0] as usize];
        let b = vertices[f[1] as usize];
        let c = vertices[f[2] as usize];
        let fx = (b - a).cross(&(c - a));
        for &idx in f {
            acc[idx as usize] += fx;
        }
    }
    acc
}
