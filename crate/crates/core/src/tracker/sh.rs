//! Real spherical harmonics, bands 0–2, for Lambertian environment lighting.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// `Y₀ = 1/(2√π)`.
pub const SH_Y0: f64 = 0.282_094_791_773_878_14;

const C1: f64 = 0.488_602_511_902_919_9;
const C2_XY: f64 = 1.092_548_430_592_079_2;
const C2_Z2: f64 = 0.315_391_565_252_520_05;
const C2_X2Y2: f64 = 0.546_274_215_296_039_6;

/// 9 illumination coefficients per color channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShCoeffs(pub [[f64; 3]; 9]);

impl ShCoeffs {
    pub fn zeros() -> Self {
        Self([[0.0; 3]; 9])
    }

    /// Pure ambient light: only the band-0 coefficient, equal per channel.
    pub fn ambient(value: f64) -> Self {
        let mut c = Self::zeros();
        c.0[0] = [value; 3];
        c
    }

    /// Ambient level that cancels Y₀, so shading returns the albedo exactly.
    pub fn white() -> Self {
        Self::ambient(1.0 / SH_Y0)
    }
}

/// The 9 basis functions at a unit direction, ordered band 0, band 1
/// (y, z, x), band 2 (xy, yz, 3z²−1, xz, x²−y²).
pub fn sh_basis(n: &Vector3<f64>) -> [f64; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        SH_Y0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2_XY * x * y,
        C2_XY * y * z,
        C2_Z2 * (3.0 * z * z - 1.0),
        C2_XY * x * z,
        C2_X2Y2 * (x * x - y * y),
    ]
}

/// Gradients `∇Y_k` of the basis polynomials, for shading derivatives.
pub fn sh_basis_grad(n: &Vector3<f64>) -> [Vector3<f64>; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        Vector3::zeros(),
        Vector3::new(0.0, C1, 0.0),
        Vector3::new(0.0, 0.0, C1),
        Vector3::new(C1, 0.0, 0.0),
        Vector3::new(C2_XY * y, C2_XY * x, 0.0),
        Vector3::new(0.0, C2_XY * z, C2_XY * y),
        Vector3::new(0.0, 0.0, 6.0 * C2_Z2 * z),
        Vector3::new(C2_XY * z, 0.0, C2_XY * x),
        Vector3::new(2.0 * C2_X2Y2 * x, -2.0 * C2_X2Y2 * y, 0.0),
    ]
}

/// Lambertian shading: `color_c = albedo_c · Σ_k γ[k][c]·Y_k(n)`, clamped to
/// non-negative at the output only.
pub fn sh_shade(normal: &Vector3<f64>, albedo: &Vector3<f64>, sh: &ShCoeffs) -> Vector3<f64> {
    sh_shade_full(normal, albedo, sh).0
}

/// Shading plus a per-channel flag marking channels clamped at zero, whose
/// gradients vanish.
pub fn sh_shade_full(
    normal: &Vector3<f64>,
    albedo: &Vector3<f64>,
    sh: &ShCoeffs,
) -> (Vector3<f64>, [bool; 3]) {
    let basis = sh_basis(normal);
    let mut out = Vector3::zeros();
    let mut clamped = [false; 3];
    for c in 0..3 {
        let mut irradiance = 0.0;
        for k in 0..9 {
            irradiance += sh.0[k][c] * basis[k];
        }
        let v = albedo[c] * irradiance;
        if v < 0.0 {
            clamped[c] = true;
            out[c] = 0.0;
        } else {
            out[c] = v;
        }
    }
    (out, clamped)
}
