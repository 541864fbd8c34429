//! The MTC1 tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MTC1" | u32 tensor-count | tensor*
//! tensor: u8 name-length | name bytes | u32 rank | u64 dims[rank] | f32 payload (row-major)
//! ```
//!
//! Morphable models, identity-feature files, and predictor weights all ship
//! in this container; only the tensor names differ.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{LinearAlbedoModel, LinearShapeModel};

const MAGIC: &[u8; 4] = b"MTC1";

/// A named f32 tensor with explicit dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            dims: vec![data.len() as u64],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len());
        Self {
            dims: vec![rows as u64, cols as u64],
            data,
        }
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_iterator(self.data.len(), self.data.iter().map(|&v| v as f64))
    }

    /// Interprets the payload as a row-major matrix.
    pub fn to_dmatrix(&self) -> Result<DMatrix<f64>> {
        if self.dims.len() != 2 {
            return Err(Error::format(
                "MTC1",
                format!("expected rank-2 tensor, got rank {}", self.dims.len()),
            ));
        }
        let (r, c) = (self.dims[0] as usize, self.dims[1] as usize);
        Ok(DMatrix::from_row_iterator(r, c, self.data.iter().map(|&v| v as f64)))
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        Self::vector(v.iter().map(|&x| x as f32).collect())
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)] as f32);
            }
        }
        Self::matrix(m.nrows(), m.ncols(), data)
    }
}

/// Ordered collection of named tensors. Order is preserved so that identical
/// content produces byte-identical files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mtc1 {
    entries: Vec<(String, Tensor)>,
}

impl Mtc1 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::format("MTC1", format!("missing required tensor `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            let bytes = name.as_bytes();
            if bytes.len() > u8::MAX as usize {
                return Err(Error::format("MTC1", format!("tensor name `{name}` too long")));
            }
            w.write_all(&[bytes.len() as u8])?;
            w.write_all(bytes)?;
            w.write_all(&(tensor.dims.len() as u32).to_le_bytes())?;
            for &d in &tensor.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            if tensor.data.len() != tensor.element_count() {
                return Err(Error::format(
                    "MTC1",
                    format!("tensor `{name}` payload does not match dims"),
                ));
            }
            for &v in &tensor.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("MTC1", "bad magic bytes"));
        }
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let mut len = [0u8; 1];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; len[0] as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::format("MTC1", "tensor name is not UTF-8"))?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::format("MTC1", format!("unreasonable rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut d = [0u8; 8];
                r.read_exact(&mut d)?;
                dims.push(u64::from_le_bytes(d));
            }
            let n: u64 = dims.iter().product();
            let mut data = vec![0f32; n as usize];
            let mut buf = vec![0u8; n as usize * 4];
            r.read_exact(&mut buf)?;
            for (i, chunk) in buf.chunks_exact(4).enumerate() {
                data[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            }
            entries.push((name, Tensor { dims, data }));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Serializes a morphable model with the canonical tensor names: `mean`,
/// `shape_basis`, `expr_basis`, `landmarks`, `kappa`, `faces`, and optionally
/// `albedo_mean`, `albedo_basis`.
pub fn model_to_mtc1(model: &LinearShapeModel) -> Mtc1 {
    let mut c = Mtc1::new();
    c.push("mean", Tensor::from_dvector(model.mean()));
    c.push("shape_basis", Tensor::from_dmatrix(model.shape_basis()));
    c.push("expr_basis", Tensor::from_dmatrix(model.expr_basis()));
    c.push(
        "landmarks",
        Tensor::vector(model.landmarks().iter().map(|&i| i as f32).collect()),
    );
    c.push("kappa", Tensor::from_dvector(model.kappa()));
    let mut faces = Vec::with_capacity(model.faces().len() * 3);
    for f in model.faces() {
        faces.extend(f.iter().map(|&i| i as f32));
    }
    c.push(
        "faces",
        Tensor {
            dims: vec![model.faces().len() as u64, 3],
            data: faces,
        },
    );
    if let Some(alb) = model.albedo() {
        c.push("albedo_mean", Tensor::from_dvector(&alb.mean));
        c.push("albedo_basis", Tensor::from_dmatrix(&alb.basis));
    }
    c
}

pub fn model_from_mtc1(container: &Mtc1) -> Result<LinearShapeModel> {
    let mean = container.require("mean")?.to_dvector();
    let shape_basis = container.require("shape_basis")?.to_dmatrix()?;
    let expr_basis = container.require("expr_basis")?.to_dmatrix()?;
    let landmarks = container
        .require("landmarks")?
        .data
        .iter()
        .map(|&v| v as u32)
        .collect();
    let kappa = container.require("kappa")?.to_dvector();
    let faces_t = container.require("faces")?;
    if faces_t.dims.len() != 2 || faces_t.dims[1] != 3 {
        return Err(Error::format("MTC1", "`faces` tensor must be F×3"));
    }
    let faces = faces_t
        .data
        .chunks_exact(3)
        .map(|c| [c[0] as u32, c[1] as u32, c[2] as u32])
        .collect();
    let albedo = match (container.get("albedo_mean"), container.get("albedo_basis")) {
        (Some(m), Some(b)) => Some(LinearAlbedoModel {
            mean: m.to_dvector(),
            basis: b.to_dmatrix()?,
        }),
        (None, None) => None,
        _ => {
            return Err(Error::format(
                "MTC1",
                "albedo_mean and albedo_basis must both be present or both absent",
            ))
        }
    };
    LinearShapeModel::new(mean, shape_basis, expr_basis, faces, landmarks, kappa, albedo)
}

pub fn save_model(model: &LinearShapeModel, path: impl AsRef<Path>) -> Result<()> {
    model_to_mtc1(model).save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinearShapeModel> {
    model_from_mtc1(&Mtc1::load(path)?)
}

/// Identity-feature file: tensors `features` (S×D) and `subject_ids` (S).
pub fn save_features(
    features: &DMatrix<f64>,
    subject_ids: &[u32],
    path: impl AsRef<Path>,
) -> Result<()> {
    if subject_ids.len() != features.nrows() {
        return Err(Error::DimensionMismatch {
            what: "subject ids",
            expected: features.nrows(),
            actual: subject_ids.len(),
        });
    }
    let mut c = Mtc1::new();
    c.push("features", Tensor::from_dmatrix(features));
    c.push(
        "subject_ids",
        Tensor::vector(subject_ids.iter().map(|&i| i as f32).collect()),
    );
    c.save(path)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, Vec<u32>)> {
    let c = Mtc1::load(path)?;
    let features = c.require("features")?.to_dmatrix()?;
    let ids = c
        .require("subject_ids")?
        .data
        .iter()
        .map(|&v| v as u32)
        .collect::<Vec<_>>();
    if ids.len() != features.nrows() {
        return Err(Error::format("MTC1", "subject_ids length does not match feature rows"));
    }
    Ok((features, ids))
}
