//! Meshes, the linear morphable model, cameras, and transforms.
//!
//! Everything here is immutable after construction and safe to share across
//! threads; operations are pure functions of their inputs. Vertices are stored
//! as `f64` meters; file formats may quantize to `f32` (see [`crate::io`]).

mod camera;
mod mesh;
mod model;
mod transform;

pub use camera::{project_point, Camera};
pub use mesh::{accumulate_face_normals, vertex_normals, Mesh};
pub use model::{
    flatten, unflatten, LinearAlbedoModel, LinearShapeModel, MAX_SHAPE_COMPONENTS,
};
pub use transform::{
    axis_angle_from_rotation, rotation_from_axis_angle, skew, so3_right_jacobian, PointTransform,
    RigidTransform, SimilarityTransform,
};

/// Orthonormality tolerance for rotation matrices: `‖RᵀR − I‖∞ < ROTATION_TOL`.
pub const ROTATION_TOL: f64 = 1e-9;
