//! The MGCN container: a small self-describing binary format for model
//! weights, sampling operators and training state.
//!
//! Layout: the magic bytes `MGCN`, a little-endian `u32` format version, a
//! little-endian `u64` byte length of a JSON header, the header itself, then
//! the raw little-endian `f64` data of every tensor back to back. The header
//! holds a `kind` string, free-form `metadata`, and a tensor directory of
//! `{name, shape, offset}` with offsets counted in elements.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::mesh::{Landmark, ScaledLaplacian, TriangleMesh};
use crate::sampling::{MeshHierarchy, SamplingPair};
use crate::sparse::CsrMatrix;
use crate::util::atomic_write;

pub const MAGIC: &[u8; 4] = b"MGCN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub metadata: Map<String, Value>,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    metadata: Map<String, Value>,
    tensors: Vec<DirectoryEntry>,
}

#[derive(Serialize, Deserialize)]
struct DirectoryEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct HierarchyMeta {
    levels: usize,
    landmarks: Vec<Vec<Landmark>>,
}

fn format_err(message: impl Into<String>) -> Error {
    Error::Format(message.into())
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            metadata: Map::new(),
            tensors: Vec::new(),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(format_err(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn set_meta<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.metadata.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .metadata
            .get(key)
            .ok_or_else(|| format_err(format!("checkpoint metadata lacks {key:?}")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(format_err(format!("duplicate tensor {name}")));
        }
        self.tensors.push(NamedTensor { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| format_err(format!("checkpoint lacks tensor {name:?}")))
    }

    /// Values of a tensor, checked against the expected shape.
    pub fn values(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(&t.data)
    }

    pub fn push_csr(&mut self, prefix: &str, m: &CsrMatrix) -> Result<()> {
        self.push(
            format!("{prefix}.row_offsets"),
            vec![m.rows() + 1],
            m.row_offsets().iter().map(|&v| v as f64).collect(),
        )?;
        self.push(
            format!("{prefix}.col_indices"),
            vec![m.nnz()],
            m.col_indices().iter().map(|&v| v as f64).collect(),
        )?;
        self.push(format!("{prefix}.values"), vec![m.nnz()], m.values().to_vec())?;
        self.push(format!("{prefix}.shape"), vec![2], vec![m.rows() as f64, m.cols() as f64])
    }

    pub fn csr(&self, prefix: &str) -> Result<CsrMatrix> {
        let shape = &self.get(&format!("{prefix}.shape"))?.data;
        if shape.len() != 2 {
            return Err(format_err(format!("{prefix}.shape must have two entries")));
        }
        let offsets = to_indices(&self.get(&format!("{prefix}.row_offsets"))?.data)?;
        let cols = to_indices(&self.get(&format!("{prefix}.col_indices"))?.data)?;
        let values = self.get(&format!("{prefix}.values"))?.data.clone();
        CsrMatrix::from_raw(
            to_index(shape[0])?,
            to_index(shape[1])?,
            offsets,
            cols,
            values,
        )
    }

    pub fn push_mesh(&mut self, prefix: &str, mesh: &TriangleMesh) -> Result<()> {
        self.push(format!("{prefix}.vertices"), vec![mesh.vertex_count(), 3], mesh.flat_vertices())?;
        self.push(
            format!("{prefix}.faces"),
            vec![mesh.face_count(), 3],
            mesh.faces().iter().flatten().map(|&i| i as f64).collect(),
        )
    }

    pub fn mesh(&self, prefix: &str, landmarks: Vec<Landmark>) -> Result<TriangleMesh> {
        let v = &self.get(&format!("{prefix}.vertices"))?.data;
        let f = to_indices(&self.get(&format!("{prefix}.faces"))?.data)?;
        if v.len() % 3 != 0 || f.len() % 3 != 0 {
            return Err(format_err(format!("{prefix}: ragged vertex or face data")));
        }
        let vertices = v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let faces = f.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        TriangleMesh::new(vertices, faces)?.with_landmarks(landmarks)
    }

    /// Stores every level mesh, sampling operator and Laplacian so inference
    /// never has to decimate again.
    pub fn push_hierarchy(&mut self, prefix: &str, h: &MeshHierarchy) -> Result<()> {
        for (i, mesh) in h.levels.iter().enumerate() {
            self.push_mesh(&format!("{prefix}.level{i}"), mesh)?;
        }
        for (i, pair) in h.pairs.iter().enumerate() {
            self.push_csr(&format!("{prefix}.pair{i}.q_down"), &pair.q_down)?;
            self.push_csr(&format!("{prefix}.pair{i}.q_up"), &pair.q_up)?;
        }
        for (i, lap) in h.laplacians.iter().enumerate() {
            self.push_csr(&format!("{prefix}.level{i}.laplacian"), &lap.laplacian)?;
            self.push_csr(&format!("{prefix}.level{i}.scaled_laplacian"), &lap.scaled)?;
        }
        // floats go through the binary section so they survive bit-exactly
        self.push(
            format!("{prefix}.lambda_max"),
            vec![h.laplacians.len()],
            h.laplacians.iter().map(|l| l.lambda_max).collect(),
        )?;
        let meta = HierarchyMeta {
            levels: h.levels.len(),
            landmarks: h.levels.iter().map(|m| m.landmarks().to_vec()).collect(),
        };
        self.set_meta(prefix, &meta)
    }

    pub fn hierarchy(&self, prefix: &str) -> Result<MeshHierarchy> {
        let meta: HierarchyMeta = self.meta(prefix)?;
        if meta.levels < 1 || meta.landmarks.len() != meta.levels {
            return Err(format_err("inconsistent hierarchy metadata"));
        }
        let lambda_max = self.values(&format!("{prefix}.lambda_max"), &[meta.levels])?;
        let levels = (0..meta.levels)
            .map(|i| self.mesh(&format!("{prefix}.level{i}"), meta.landmarks[i].clone()))
            .collect::<Result<Vec<_>>>()?;
        let pairs = (0..meta.levels - 1)
            .map(|i| {
                Ok(SamplingPair {
                    fine_count: levels[i].vertex_count(),
                    coarse_count: levels[i + 1].vertex_count(),
                    q_down: self.csr(&format!("{prefix}.pair{i}.q_down"))?,
                    q_up: self.csr(&format!("{prefix}.pair{i}.q_up"))?,
                    coarse_mesh: levels[i + 1].clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let laplacians = (0..meta.levels)
            .map(|i| {
                Ok(ScaledLaplacian {
                    laplacian: self.csr(&format!("{prefix}.level{i}.laplacian"))?,
                    lambda_max: lambda_max[i],
                    scaled: self.csr(&format!("{prefix}.level{i}.scaled_laplacian"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MeshHierarchy {
            levels,
            pairs,
            laplacians,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let directory = self
            .tensors
            .iter()
            .map(|t| {
                let e = DirectoryEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.data.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            kind: self.kind.clone(),
            metadata: self.metadata.clone(),
            tensors: directory,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(format_err("not an MGCN file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported MGCN version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_err("truncated MGCN header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        let data = &bytes[header_end..];
        if !data.len().is_multiple_of(8) {
            return Err(format_err("MGCN data is not a whole number of f64 values"));
        }
        let total = data.len() / 8;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let len: usize = e.shape.iter().product();
            if e.offset + len > total {
                return Err(format_err(format!("tensor {} runs past the end of the file", e.name)));
            }
            let values = data[e.offset * 8..(e.offset + len) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data: values,
            });
        }
        Ok(Self {
            kind: header.kind,
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn to_index(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
        Ok(v as usize)
    } else {
        Err(format_err(format!("{v} is not a valid index")))
    }
}

fn to_indices(v: &[f64]) -> Result<Vec<usize>> {
    v.iter().map(|&x| to_index(x)).collect()
}
