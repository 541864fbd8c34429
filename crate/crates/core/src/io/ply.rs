//! Binary little-endian PLY with float32 vertices and int32 face indices.
//!
//! Reads and writes exactly the schema this toolkit emits: `x y z` float
//! properties on `vertex` and a `list uchar int vertex_indices` property on
//! `face`. A file with zero faces is a valid point cloud.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Mesh;

pub fn write_ply(path: impl AsRef<Path>, vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        vertices.len(),
        faces.len()
    )?;
    for v in vertices {
        for c in [v.x, v.y, v.z] {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
    }
    for f in faces {
        w.write_all(&[3u8])?;
        for &i in f {
            w.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_mesh_ply(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    write_ply(path, &mesh.vertices, &mesh.faces)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<(Vec<Vector3<f64>>, Vec<[u32; 3]>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut vertex_count = 0usize;
    let mut face_count = 0usize;
    let mut seen_format = false;
    let mut current_element = String::new();
    let mut vertex_props: Vec<String> = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::format("PLY", "unexpected end of header"));
        }
        let line = line.trim_end();
        if line == "end_header" {
            break;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("ply") | Some("comment") | None => {}
            Some("format") => {
                if parts.next() != Some("binary_little_endian") {
                    return Err(Error::format("PLY", "only binary_little_endian is supported"));
                }
                seen_format = true;
            }
            Some("element") => {
                current_element = parts.next().unwrap_or("").to_string();
                let count: usize = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::format("PLY", "bad element count"))?;
                match current_element.as_str() {
                    "vertex" => vertex_count = count,
                    "face" => face_count = count,
                    other => {
                        return Err(Error::format("PLY", format!("unsupported element `{other}`")))
                    }
                }
            }
            Some("property") => {
                if current_element == "vertex" {
                    let kind = parts.next().unwrap_or("");
                    if kind != "float" {
                        return Err(Error::format("PLY", "vertex properties must be float"));
                    }
                    vertex_props.push(parts.next().unwrap_or("").to_string());
                }
                // Face property line is fixed-form; validated implicitly by the payload.
            }
            Some(other) => {
                return Err(Error::format("PLY", format!("unsupported header token `{other}`")));
            }
        }
    }
    if !seen_format {
        return Err(Error::format("PLY", "missing format line"));
    }
    if vertex_props.len() < 3 || vertex_props[0] != "x" || vertex_props[1] != "y" || vertex_props[2] != "z" {
        return Err(Error::format("PLY", "vertex element must start with float x, y, z"));
    }
    let extra = vertex_props.len() - 3;
    let mut vertices = Vec::with_capacity(vertex_count);
    let mut buf4 = [0u8; 4];
    for _ in 0..vertex_count {
        let mut coords = [0f32; 3];
        for c in &mut coords {
            r.read_exact(&mut buf4)?;
            *c = f32::from_le_bytes(buf4);
        }
        for _ in 0..extra {
            r.read_exact(&mut buf4)?;
        }
        vertices.push(Vector3::new(coords[0] as f64, coords[1] as f64, coords[2] as f64));
    }
    let mut faces = Vec::with_capacity(face_count);
    for _ in 0..face_count {
        let mut n = [0u8; 1];
        r.read_exact(&mut n)?;
        if n[0] != 3 {
            return Err(Error::format("PLY", format!("only triangles supported, got {}-gon", n[0])));
        }
        let mut idx = [0u32; 3];
        for i in &mut idx {
            r.read_exact(&mut buf4)?;
            let v = i32::from_le_bytes(buf4);
            if v < 0 {
                return Err(Error::format("PLY", "negative face index"));
            }
            *i = v as u32;
        }
        faces.push(idx);
    }
    // Trailing garbage suggests a schema mismatch.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::format("PLY", "trailing bytes after declared payload"));
    }
    Ok((vertices, faces))
}

pub fn read_mesh_ply(path: impl AsRef<Path>) -> Result<Mesh> {
    let (vertices, faces) = read_ply(path)?;
    Mesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_round_trip() {
        let dir = std::env::temp_dir().join("metriface_ply_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tri.ply");
        let vertices = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.25, 0.0),
            Vector3::new(0.0, 1.0, -0.5),
        ];
        let faces = vec![[0u32, 1, 2]];
        write_ply(&path, &vertices, &faces).unwrap();
        let (v, f) = read_ply(&path).unwrap();
        assert_eq!(f, faces);
        for (a, b) in v.iter().zip(&vertices) {
            assert!((a - b).norm() < 1e-6); // f32 quantization
        }
    }

    #[test]
    fn point_cloud_round_trip() {
        let dir = std::env::temp_dir().join("metriface_ply_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cloud.ply");
        let pts = vec![Vector3::new(0.5, -0.5, 2.0); 7];
        write_ply(&path, &pts, &[]).unwrap();
        let (v, f) = read_ply(&path).unwrap();
        assert_eq!(v.len(), 7);
        assert!(f.is_empty());
    }
}
