//! Triangle meshes with a shared topology, plus the graph operators built on
//! them.

mod io;
mod laplacian;
pub mod primitives;

pub use io::{load_landmarks, load_mesh, save_landmarks, save_mesh, MeshFormat};
pub(crate) use io::write_ply;
pub use laplacian::{
    build_adjacency, largest_eigenvalue, normalized_laplacian, scale_laplacian, ScaledLaplacian,
    POWER_ITERATION_CAP, POWER_ITERATION_TOLERANCE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// A named vertex of a mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Landmark {
    pub name: String,
    pub vertex_index: usize,
}

/// A triangulated surface. Coordinates are in millimetres.
///
/// Construction through [`TriangleMesh::new`] guarantees that every face
/// index is in range, no face repeats a vertex, and every vertex belongs to
/// at least one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    #[serde(default)]
    landmarks: Vec<Landmark>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        let mut used = vec![false; n];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::InvalidMesh(format!(
                        "face {fi} references vertex {v} but the mesh has {n} vertices"
                    )));
                }
                used[v] = true;
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::IsolatedVertex(v));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        Ok(Self {
            vertices,
            faces,
            landmarks: Vec::new(),
        })
    }

    pub fn with_landmarks(mut self, landmarks: Vec<Landmark>) -> Result<Self> {
        if let Some(l) = landmarks.iter().find(|l| l.vertex_index >= self.vertices.len()) {
            return Err(Error::InvalidMesh(format!(
                "landmark {} points at vertex {} outside the mesh",
                l.name, l.vertex_index
            )));
        }
        self.landmarks = landmarks;
        Ok(self)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn landmark_positions(&self) -> Vec<Vec3> {
        self.landmarks
            .iter()
            .map(|l| self.vertices[l.vertex_index])
            .collect()
    }

    /// Same topology and landmarks, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            landmarks: self.landmarks.clone(),
        })
    }

    /// Vertices flattened row-major into an `N x 3` block.
    pub fn flat_vertices(&self) -> Vec<f64> {
        self.vertices.iter().flatten().copied().collect()
    }

    /// Same topology with vertices taken from a flat `N x 3` block.
    pub fn with_flat_vertices(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.vertices.len() * 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} coordinates, got {}",
                self.vertices.len() * 3,
                flat.len()
            )));
        }
        self.with_vertices(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Unit normal of each face, following the face winding.
    pub fn face_normals(&self) -> Vec<Vec3> {
        self.faces
            .iter()
            .map(|f| {
                let n = triangle_normal(
                    &self.vertices[f[0]],
                    &self.vertices[f[1]],
                    &self.vertices[f[2]],
                );
                normalize(n)
            })
            .collect()
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![[0.0; 3]; self.vertices.len()];
        for f in &self.faces {
            let n = triangle_normal(
                &self.vertices[f[0]],
                &self.vertices[f[1]],
                &self.vertices[f[2]],
            );
            for &v in f {
                acc[v] = add(acc[v], n);
            }
        }
        acc.into_iter().map(normalize).collect()
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Length of the bounding-box diagonal.
    pub fn bounding_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        norm(sub(hi, lo))
    }
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}

/// Unnormalized normal `(b - a) x (c - a)`; its length is twice the area.
pub(crate) fn triangle_normal(a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    cross(sub(*b, *a), sub(*c, *a))
}
