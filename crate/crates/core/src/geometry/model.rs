use nalgebra::{DMatrix, DVector, Vector3};

use super::Mesh;
use crate::error::{Error, Result};

/// Hard cap on the number of shape components; the reference model exposes at
/// most 300 principal components.
pub const MAX_SHAPE_COMPONENTS: usize = 300;

/// Linear per-vertex albedo model: `albedo = mean + basis·β`, flattened RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAlbedoModel {
    pub mean: DVector<f64>,
    pub basis: DMatrix<f64>,
}

impl LinearAlbedoModel {
    pub fn coeff_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn decode(&self, beta: &DVector<f64>) -> Result<Vec<Vector3<f64>>> {
        if beta.len() != self.basis.ncols() {
            return Err(Error::DimensionMismatch {
                what: "albedo coefficients",
                expected: self.basis.ncols(),
                actual: beta.len(),
            });
        }
        let flat = &self.mean + &self.basis * beta;
        Ok(unflatten(&flat))
    }
}

/// The linear morphable model: mean geometry `A` (3N), shape basis `B`
/// (3N×K), expression basis (3N×Ke), template faces, landmark vertex indices,
/// and per-vertex region weights κ for the training loss.
///
/// Vertices are flattened row-major: vertex `i` occupies rows `3i..3i+3`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearShapeModel {
    mean: DVector<f64>,
    shape_basis: DMatrix<f64>,
    expr_basis: DMatrix<f64>,
    faces: Vec<[u32; 3]>,
    landmarks: Vec<u32>,
    kappa: DVector<f64>,
    albedo: Option<LinearAlbedoModel>,
}

impl LinearShapeModel {
    pub fn new(
        mean: DVector<f64>,
        shape_basis: DMatrix<f64>,
        expr_basis: DMatrix<f64>,
        faces: Vec<[u32; 3]>,
        landmarks: Vec<u32>,
        kappa: DVector<f64>,
        albedo: Option<LinearAlbedoModel>,
    ) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || dim % 3 != 0 {
            return Err(Error::invalid(format!("mean length {dim} is not a positive multiple of 3")));
        }
        let n = dim / 3;
        if shape_basis.nrows() != dim {
            return Err(Error::DimensionMismatch {
                what: "shape basis rows",
                expected: dim,
                actual: shape_basis.nrows(),
            });
        }
        if expr_basis.nrows() != dim {
            return Err(Error::DimensionMismatch {
                what: "expression basis rows",
                expected: dim,
                actual: expr_basis.nrows(),
            });
        }
        if shape_basis.ncols() > MAX_SHAPE_COMPONENTS {
            return Err(Error::invalid(format!(
                "shape basis has {} components, cap is {MAX_SHAPE_COMPONENTS}",
                shape_basis.ncols()
            )));
        }
        if kappa.len() != n {
            return Err(Error::DimensionMismatch {
                what: "kappa weights",
                expected: n,
                actual: kappa.len(),
            });
        }
        if kappa.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::invalid("kappa weights must be positive and finite"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mean geometry contains non-finite values"));
        }
        for (name, basis) in [("shape", &shape_basis), ("expression", &expr_basis)] {
            for (j, col) in basis.column_iter().enumerate() {
                if col.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("{name} basis column {j} is non-finite")));
                }
                if col.norm() == 0.0 {
                    return Err(Error::invalid(format!("{name} basis column {j} is zero")));
                }
            }
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&idx| idx as usize >= n) {
                return Err(Error::invalid(format!("template face {i} out of range (N = {n})")));
            }
        }
        if landmarks.iter().any(|&l| l as usize >= n) {
            return Err(Error::invalid("landmark index out of range"));
        }
        if let Some(alb) = &albedo {
            if alb.mean.len() != dim || alb.basis.nrows() != dim {
                return Err(Error::invalid("albedo model dimensions do not match geometry"));
            }
        }
        Ok(Self {
            mean,
            shape_basis,
            expr_basis,
            faces,
            landmarks,
            kappa,
            albedo,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.mean.len() / 3
    }

    /// Number of shape components K.
    pub fn shape_dim(&self) -> usize {
        self.shape_basis.ncols()
    }

    /// Number of expression components Ke.
    pub fn expr_dim(&self) -> usize {
        self.expr_basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn shape_basis(&self) -> &DMatrix<f64> {
        &self.shape_basis
    }

    pub fn expr_basis(&self) -> &DMatrix<f64> {
        &self.expr_basis
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn landmarks(&self) -> &[u32] {
        &self.landmarks
    }

    pub fn kappa(&self) -> &DVector<f64> {
        &self.kappa
    }

    pub fn albedo(&self) -> Option<&LinearAlbedoModel> {
        self.albedo.as_ref()
    }

    /// Mean geometry as a mesh (zero shape and expression code).
    pub fn mean_mesh(&self) -> Mesh {
        Mesh {
            vertices: unflatten(&self.mean),
            faces: self.faces.clone(),
            albedo: None,
        }
    }

    /// Decodes `A + B·z (+ Bexp·expr)` into a mesh with the template faces.
    pub fn decode(&self, z: &DVector<f64>, expr: Option<&DVector<f64>>) -> Result<Mesh> {
        if z.len() != self.shape_dim() {
            return Err(Error::DimensionMismatch {
                what: "shape code z",
                expected: self.shape_dim(),
                actual: z.len(),
            });
        }
        let mut flat = &self.mean + &self.shape_basis * z;
        if let Some(e) = expr {
            if e.len() != self.expr_dim() {
                return Err(Error::DimensionMismatch {
                    what: "expression code",
                    expected: self.expr_dim(),
                    actual: e.len(),
                });
            }
            flat += &self.expr_basis * e;
        }
        Ok(Mesh {
            vertices: unflatten(&flat),
            faces: self.faces.clone(),
            albedo: None,
        })
    }

    /// 3D positions of the model's landmark vertices on a decoded mesh.
    pub fn landmark_positions(&self, mesh: &Mesh) -> Vec<Vector3<f64>> {
        self.landmarks.iter().map(|&i| mesh.vertices[i as usize]).collect()
    }

    /// Total decoder parameter count `(K + 1)·N·3`: the basis plus the mean.
    pub fn decoder_parameter_count(&self) -> usize {
        (self.shape_dim() + 1) * self.vertex_count() * 3
    }
}

/// 3N flat vector → N vertex rows.
pub fn unflatten(flat: &DVector<f64>) -> Vec<Vector3<f64>> {
    flat.as_slice()
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect()
}

/// N vertex rows → 3N flat vector.
pub fn flatten(vertices: &[Vector3<f64>]) -> DVector<f64> {
    let mut flat = DVector::zeros(vertices.len() * 3);
    for (i, v) in vertices.iter().enumerate() {
        flat[3 * i] = v.x;
        flat[3 * i + 1] = v.y;
        flat[3 * i + 2] = v.z;
    }
    flat
}
