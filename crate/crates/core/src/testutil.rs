//! Shared fixtures for the registration tests: a well-conditioned synthetic
//! model over a UV sphere and uniform surface sampling.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::geometry::{flatten, LinearAlbedoModel, LinearShapeModel, Mesh};

/// Same sphere model plus a smooth linear albedo container, for tracker
/// tests.
pub(crate) fn sphere_model_with_albedo(seed: u64, k: usize) -> LinearShapeModel {
    let base = sphere_model(seed, k);
    let mut rng = StdRng::seed_from_u64(seed ^ 0xa1b2);
    let mesh = base.mean_mesh();
    let n = mesh.vertices.len();
    let mut mean = DVector::zeros(3 * n);
    for (i, v) in mesh.vertices.iter().enumerate() {
        let d = v.normalize();
        mean[3 * i] = 0.70 + 0.10 * (6.0 * d.x).sin();
        mean[3 * i + 1] = 0.55 + 0.08 * (5.0 * d.y).cos();
        mean[3 * i + 2] = 0.45 + 0.06 * (4.0 * d.z).sin();
    }
    let mut raw = DMatrix::zeros(3 * n, 2);
    for col in 0..2 {
        let f = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 10.0;
        for (i, v) in mesh.vertices.iter().enumerate() {
            raw[(3 * i, col)] = (f.dot(v)).sin();
            raw[(3 * i + 1, col)] = (f.dot(v) + 1.0).sin();
            raw[(3 * i + 2, col)] = (f.dot(v) + 2.0).sin();
        }
    }
    let albedo = LinearAlbedoModel {
        mean,
        basis: raw.qr().q(),
    };
    LinearShapeModel::new(
        base.mean().clone(),
        base.shape_basis().clone(),
        base.expr_basis().clone(),
        base.faces().to_vec(),
        base.landmarks().to_vec(),
        base.kappa().clone(),
        Some(albedo),
    )
    .unwrap()
}

pub(crate) fn sphere_model(seed: u64, k: usize) -> LinearShapeModel {
    let mut rng = StdRng::seed_from_u64(seed);
    let (rings, segs) = (12usize, 18usize);
    let mut vertices = Vec::new();
    for r in 0..=rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segs {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segs as f64;
            let dir = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            vertices.push(dir * 0.1);
        }
    }
    let mut faces = Vec::new();
    for r in 0..rings {
        for s in 0..segs {
            let s1 = (s + 1) % segs;
            let a = (r * segs + s) as u32;
            let b = (r * segs + s1) as u32;
            let c = ((r + 1) * segs + s) as u32;
            let d = ((r + 1) * segs + s1) as u32;
            if r > 0 {
                faces.push([a, b, c]);
            }
            if r + 1 < rings {
                faces.push([b, d, c]);
            }
        }
    }
    let n = vertices.len();
    let mean = flatten(&vertices);
    let mut raw = DMatrix::zeros(3 * n, k);
    for col in 0..k {
        let f1 = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 20.0;
        let f2 = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 20.0;
        let ph = rng.random::<f64>() * 6.28;
        for (i, v) in vertices.iter().enumerate() {
            raw[(3 * i, col)] = (f1.dot(v) + ph).sin();
            raw[(3 * i + 1, col)] = (f2.dot(v) + ph).cos();
            raw[(3 * i + 2, col)] = (f1.dot(v) - f2.dot(v)).sin();
        }
    }
    let shape = raw.qr().q();
    let mut raw_e = DMatrix::zeros(3 * n, 2);
    for col in 0..2 {
        let f = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 15.0;
        for (i, v) in vertices.iter().enumerate() {
            raw_e[(3 * i, col)] = (f.dot(v)).cos();
            raw_e[(3 * i + 1, col)] = (f.dot(v) * 0.5).sin();
            raw_e[(3 * i + 2, col)] = (f.dot(v) * 1.5).cos();
        }
    }
    let expr = raw_e.qr().q();
    let landmarks: Vec<u32> = (0..14).map(|i| (i * 15 + 3) as u32 % n as u32).collect();
    LinearShapeModel::new(
        mean,
        shape,
        expr,
        faces,
        landmarks,
        DVector::from_element(n, 1.0),
        None,
    )
    .unwrap()
}

pub(crate) fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let f = mesh.faces[rng.random_range(0..mesh.faces.len())];
            let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let a = mesh.vertices[f[0] as usize];
            let b = mesh.vertices[f[1] as usize];
            let c = mesh.vertices[f[2] as usize];
            a + (b - a) * u + (c - a) * v
        })
        .collect()
}
