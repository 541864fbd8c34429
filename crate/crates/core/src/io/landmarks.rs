//! Landmark file formats.
//!
//! 3D scan landmarks: a JSON array of `{ "name": ..., "position": [x, y, z] }`
//! in meters, plus a sidecar object mapping each name to a model vertex index.
//! 2D frame landmarks: `{ "name": ..., "px": [u, v], "conf": c }`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark3 {
    pub name: String,
    pub position: [f64; 3],
}

impl Landmark3 {
    pub fn point(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark2 {
    pub name: String,
    pub px: [f64; 2],
    pub conf: f64,
}

impl Landmark2 {
    pub fn pixel(&self) -> Vector2<f64> {
        Vector2::from(self.px)
    }
}

/// name → model vertex index. BTreeMap keeps serialization deterministic.
pub type LandmarkMap = BTreeMap<String, u32>;

pub fn save_landmarks3(path: impl AsRef<Path>, landmarks: &[Landmark3]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(landmarks)?)?;
    Ok(())
}

pub fn load_landmarks3(path: impl AsRef<Path>) -> Result<Vec<Landmark3>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn save_landmarks2(path: impl AsRef<Path>, landmarks: &[Landmark2]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(landmarks)?)?;
    Ok(())
}

pub fn load_landmarks2(path: impl AsRef<Path>) -> Result<Vec<Landmark2>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn save_landmark_map(path: impl AsRef<Path>, map: &LandmarkMap) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(map)?)?;
    Ok(())
}

pub fn load_landmark_map(path: impl AsRef<Path>) -> Result<LandmarkMap> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Joins named scan landmarks against the sidecar map, yielding
/// `(model vertex index, scan position)` pairs. Names without a mapping are
/// skipped; callers decide whether the surviving count is sufficient.
pub fn resolve_correspondences(
    landmarks: &[Landmark3],
    map: &LandmarkMap,
) -> Vec<(u32, Vector3<f64>)> {
    landmarks
        .iter()
        .filter_map(|l| map.get(&l.name).map(|&idx| (idx, l.point())))
        .collect()
}
