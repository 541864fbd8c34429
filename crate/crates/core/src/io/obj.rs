//! ASCII OBJ, `v` and `f` records only.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Mesh;

pub fn write_obj(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        // OBJ indices are 1-based.
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let r = BufReader::new(File::open(path)?);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut coords = [0f64; 3];
                for c in &mut coords {
                    *c = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::format("OBJ", format!("bad vertex on line {}", lineno + 1)))?;
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = [0u32; 3];
                for i in &mut idx {
                    // Tolerate `v/vt/vn` forms by taking the leading index.
                    let token = parts
                        .next()
                        .ok_or_else(|| Error::format("OBJ", format!("bad face on line {}", lineno + 1)))?;
                    let lead = token.split('/').next().unwrap_or("");
                    let one_based: i64 = lead
                        .parse()
                        .map_err(|_| Error::format("OBJ", format!("bad face index on line {}", lineno + 1)))?;
                    if one_based < 1 {
                        return Err(Error::format("OBJ", format!("non-positive face index on line {}", lineno + 1)));
                    }
                    *i = (one_based - 1) as u32;
                }
                if parts.next().is_some() {
                    return Err(Error::format("OBJ", format!("only triangles supported (line {})", lineno + 1)));
                }
                faces.push(idx);
            }
            // Comments, empty lines, and records we do not emit.
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}
