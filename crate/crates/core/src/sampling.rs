//! Mesh down-sampling by quadric-error edge collapse, barycentric
//! up-sampling, and the multi-level hierarchy the autoencoder runs on.
//!
//! Every collapse moves one endpoint onto the other, so the coarse mesh keeps
//! a subset of the fine vertices at their original positions. This makes the
//! down-sampling operator a binary selection matrix.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{closest_point_on_triangle, distance_squared};
use crate::mesh::{cross, dot, norm, normalize, sub, triangle_normal, ScaledLaplacian, TriangleMesh, Vec3};
use crate::sparse::CsrMatrix;

/// Weight of the constraint planes placed along open boundary edges.
const BOUNDARY_WEIGHT: f64 = 10.0;

/// Symmetric 4x4 quadric stored as its upper triangle.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Quadric([f64; 10]);

impl Quadric {
    fn from_plane(n: Vec3, d: f64, weight: f64) -> Self {
        let p = [n[0], n[1], n[2], d];
        let mut q = [0.0; 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                q[k] = weight * p[i] * p[j];
                k += 1;
            }
        }
        Quadric(q)
    }

    fn add(&self, other: &Self) -> Self {
        let mut q = self.0;
        for (a, b) in q.iter_mut().zip(other.0) {
            *a += b;
        }
        Quadric(q)
    }

    /// `[p 1] Q [p 1]^T`.
    fn eval(&self, p: Vec3) -> f64 {
        let q = &self.0;
        let (x, y, z) = (p[0], p[1], p[2]);
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    keep: usize,
    remove: usize,
    versions: (u32, u32),
}

impl Candidate {
    fn key(&self) -> (usize, usize) {
        (self.keep.min(self.remove), self.keep.max(self.remove))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.key().cmp(&other.key()))
            .then_with(|| self.versions.cmp(&other.versions))
    }
}

/// Result of one decimation run.
#[derive(Debug, Clone)]
pub struct Decimation {
    pub coarse: TriangleMesh,
    /// `coarse_count x fine_count` selection matrix.
    pub q_down: CsrMatrix,
    /// Fine index of each coarse vertex, ascending.
    pub kept: Vec<usize>,
    /// Quadric cost of every collapse, in the order performed.
    pub collapse_costs: Vec<f64>,
}

struct Decimator<'a> {
    positions: &'a [Vec3],
    quadrics: Vec<Quadric>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<usize>>,
    removed: Vec<bool>,
    versions: Vec<u32>,
    heap: BinaryHeap<Reverse<Candidate>>,
}

impl<'a> Decimator<'a> {
    fn new(mesh: &'a TriangleMesh) -> Self {
        let positions = mesh.vertices();
        let n = positions.len();
        let faces = mesh.faces().to_vec();
        let mut quadrics = vec![Quadric::default(); n];
        let mut vertex_faces = vec![Vec::new(); n];
        for (fi, f) in faces.iter().enumerate() {
            let normal = normalize(triangle_normal(&positions[f[0]], &positions[f[1]], &positions[f[2]]));
            let q = Quadric::from_plane(normal, -dot(normal, positions[f[0]]), 1.0);
            for &v in f {
                quadrics[v] = quadrics[v].add(&q);
                vertex_faces[v].push(fi);
            }
        }
        // constraint planes perpendicular to open boundary edges
        let mut edge_faces: std::collections::HashMap<(usize, usize), Vec<usize>> = Default::default();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let mut boundary: Vec<(&(usize, usize), &Vec<usize>)> =
            edge_faces.iter().filter(|(_, fs)| fs.len() == 1).collect();
        boundary.sort();
        for (&(a, b), fs) in boundary {
            let f = faces[fs[0]];
            let fnormal = normalize(triangle_normal(&positions[f[0]], &positions[f[1]], &positions[f[2]]));
            let n = normalize(cross(sub(positions[b], positions[a]), fnormal));
            let q = Quadric::from_plane(n, -dot(n, positions[a]), BOUNDARY_WEIGHT);
            quadrics[a] = quadrics[a].add(&q);
            quadrics[b] = quadrics[b].add(&q);
        }
        let face_alive = vec![true; faces.len()];
        let mut dec = Self {
            positions,
            quadrics,
            faces,
            face_alive,
            vertex_faces,
            removed: vec![false; n],
            versions: vec![0; n],
            heap: BinaryHeap::new(),
        };
        for (a, b) in mesh.edges() {
            dec.push_edge(a, b);
        }
        dec
    }

    fn push_edge(&mut self, a: usize, b: usize) {
        let q = self.quadrics[a].add(&self.quadrics[b]);
        let cost_a = q.eval(self.positions[a]);
        let cost_b = q.eval(self.positions[b]);
        // keep the endpoint with the lower combined error; ties keep the lower index
        let (keep, remove, cost) = match cost_a.total_cmp(&cost_b) {
            Ordering::Less => (a, b, cost_a),
            Ordering::Greater => (b, a, cost_b),
            Ordering::Equal => (a.min(b), a.max(b), cost_a),
        };
        self.heap.push(Reverse(Candidate {
            cost,
            keep,
            remove,
            versions: (self.versions[keep], self.versions[remove]),
        }));
    }

    fn live_faces(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.vertex_faces[v].iter().copied().filter(|&f| self.face_alive[f])
    }

    fn neighbours(&self, v: usize) -> BTreeSet<usize> {
        self.live_faces(v)
            .flat_map(|f| self.faces[f])
            .filter(|&w| w != v)
            .collect()
    }

    fn edge_face_count(&self, a: usize, b: usize) -> usize {
        self.live_faces(a).filter(|&f| self.faces[f].contains(&b)).count()
    }

    fn is_boundary_vertex(&self, v: usize) -> bool {
        self.neighbours(v).into_iter().any(|w| self.edge_face_count(v, w) == 1)
    }

    fn collapse_is_valid(&self, keep: usize, remove: usize) -> bool {
        let shared: Vec<usize> = self
            .live_faces(remove)
            .filter(|&f| self.faces[f].contains(&keep))
            .collect();
        if shared.is_empty() {
            return false;
        }
        // link condition: common neighbours are exactly the opposite vertices
        let opposite: BTreeSet<usize> = shared
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&w| w != keep && w != remove)
            .collect();
        let common: BTreeSet<usize> = self
            .neighbours(keep)
            .intersection(&self.neighbours(remove))
            .copied()
            .collect();
        if common != opposite {
            return false;
        }
        if shared.len() == 2 && self.is_boundary_vertex(keep) && self.is_boundary_vertex(remove) {
            return false;
        }
        // the surviving fan of `remove` must not flip or degenerate
        for f in self.live_faces(remove) {
            let face = self.faces[f];
            if face.contains(&keep) {
                continue;
            }
            let p = face.map(|v| self.positions[v]);
            let before = triangle_normal(&p[0], &p[1], &p[2]);
            let moved = face.map(|v| if v == remove { self.positions[keep] } else { self.positions[v] });
            let after = triangle_normal(&moved[0], &moved[1], &moved[2]);
            let scale = norm(before).max(f64::MIN_POSITIVE);
            if norm(after) <= 1e-12 * scale || dot(before, after) <= 0.0 {
                return false;
            }
        }
        true
    }

    fn collapse(&mut self, keep: usize, remove: usize) {
        let faces: Vec<usize> = self.live_faces(remove).collect();
        for f in faces {
            if self.faces[f].contains(&keep) {
                self.face_alive[f] = false;
            } else {
                for v in self.faces[f].iter_mut() {
                    if *v == remove {
                        *v = keep;
                    }
                }
                self.vertex_faces[keep].push(f);
            }
        }
        self.vertex_faces[remove].clear();
        self.vertex_faces[keep].retain(|&f| self.face_alive[f]);
        self.vertex_faces[keep].sort_unstable();
        self.vertex_faces[keep].dedup();
        self.removed[remove] = true;
        self.quadrics[keep] = self.quadrics[keep].add(&self.quadrics[remove]);

        let ring = self.neighbours(keep);
        self.versions[keep] += 1;
        for &w in &ring {
            self.versions[w] += 1;
        }
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &v in std::iter::once(&keep).chain(ring.iter()) {
            for w in self.neighbours(v) {
                edges.insert((v.min(w), v.max(w)));
            }
        }
        for (a, b) in edges {
            self.push_edge(a, b);
        }
    }

    fn is_current(&self, c: &Candidate) -> bool {
        !self.removed[c.keep]
            && !self.removed[c.remove]
            && c.versions == (self.versions[c.keep], self.versions[c.remove])
    }
}

/// Greedily collapses edges of minimum quadric cost until exactly
/// `target_count` vertices remain.
///
/// The result is a pure function of the mesh and target: ties in cost are
/// broken by the lower vertex index of the edge.
pub fn decimate_quadric(mesh: &TriangleMesh, target_count: usize) -> Result<Decimation> {
    let n = mesh.vertex_count();
    if target_count < 4 || target_count >= n {
        return Err(Error::ConfigMismatch(format!(
            "decimation target must satisfy 4 <= target < {n}, got {target_count}"
        )));
    }
    let mut dec = Decimator::new(mesh);
    let mut alive = n;
    let mut collapse_costs = Vec::with_capacity(n - target_count);
    let mut rejected: HashSet<(usize, usize, (u32, u32))> = HashSet::new();
    while alive > target_count {
        let Some(Reverse(c)) = dec.heap.pop() else {
            return Err(Error::TargetUnreachable {
                reached: alive,
                target: target_count,
            });
        };
        if !dec.is_current(&c) || rejected.contains(&(c.keep, c.remove, c.versions)) {
            continue;
        }
        if !dec.collapse_is_valid(c.keep, c.remove) {
            rejected.insert((c.keep, c.remove, c.versions));
            continue;
        }
        dec.collapse(c.keep, c.remove);
        collapse_costs.push(c.cost);
        alive -= 1;
    }

    let kept: Vec<usize> = (0..n).filter(|&v| !dec.removed[v]).collect();
    let mut new_index = vec![usize::MAX; n];
    for (i, &v) in kept.iter().enumerate() {
        new_index[v] = i;
    }
    let mut seen = HashSet::new();
    let mut faces = Vec::new();
    for (f, face) in dec.faces.iter().enumerate() {
        if !dec.face_alive[f] {
            continue;
        }
        let mapped = face.map(|v| new_index[v]);
        let mut key = mapped;
        key.sort_unstable();
        if key[0] == key[1] || key[1] == key[2] || !seen.insert(key) {
            continue;
        }
        faces.push(mapped);
    }
    let vertices = kept.iter().map(|&v| mesh.vertices()[v]).collect();
    let coarse = TriangleMesh::new(vertices, faces).map_err(|_| Error::TargetUnreachable {
        reached: alive,
        target: target_count,
    })?;
    let q_down = CsrMatrix::from_triplets(
        kept.len(),
        n,
        kept.iter().enumerate().map(|(i, &v)| (i, v, 1.0)),
    )?;
    Ok(Decimation {
        coarse,
        q_down,
        kept,
        collapse_costs,
    })
}

/// Up-sampling operator from `coarse` back to `fine`.
///
/// Kept vertices copy their coarse counterpart. Discarded vertices are
/// expressed in barycentric coordinates of their closest point on the
/// nearest coarse triangle (exhaustive search; the lowest face index wins
/// ties).
pub fn build_upsampling(
    fine: &TriangleMesh,
    coarse: &TriangleMesh,
    q_down: &CsrMatrix,
) -> Result<CsrMatrix> {
    if coarse.face_count() == 0 {
        return Err(Error::EmptyCoarseMesh);
    }
    if q_down.rows() != coarse.vertex_count() || q_down.cols() != fine.vertex_count() {
        return Err(Error::ShapeMismatch(format!(
            "q_down is {}x{} but meshes have {} coarse and {} fine vertices",
            q_down.rows(),
            q_down.cols(),
            coarse.vertex_count(),
            fine.vertex_count()
        )));
    }
    let mut kept_as = vec![None; fine.vertex_count()];
    for r in 0..q_down.rows() {
        for (c, _) in q_down.row(r) {
            kept_as[c] = Some(r);
        }
    }
    let cv = coarse.vertices();
    let mut triplets = Vec::new();
    for (i, p) in fine.vertices().iter().enumerate() {
        if let Some(r) = kept_as[i] {
            triplets.push((i, r, 1.0));
            continue;
        }
        let mut best = (f64::INFINITY, 0usize, [0.0; 3]);
        for (fi, f) in coarse.faces().iter().enumerate() {
            let (q, w) = closest_point_on_triangle(*p, cv[f[0]], cv[f[1]], cv[f[2]]);
            let d = distance_squared(*p, q);
            if d < best.0 {
                best = (d, fi, w);
            }
        }
        let f = coarse.faces()[best.1];
        for k in 0..3 {
            triplets.push((i, f[k], best.2[k]));
        }
    }
    CsrMatrix::from_triplets(fine.vertex_count(), coarse.vertex_count(), triplets)
}

/// Down/up-sampling operators between two consecutive levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPair {
    pub fine_count: usize,
    pub coarse_count: usize,
    pub q_down: CsrMatrix,
    pub q_up: CsrMatrix,
    pub coarse_mesh: TriangleMesh,
}

/// Meshes from finest to coarsest, the operators between them, and the
/// scaled Laplacian of every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshHierarchy {
    pub levels: Vec<TriangleMesh>,
    pub pairs: Vec<SamplingPair>,
    pub laplacians: Vec<ScaledLaplacian>,
}

impl MeshHierarchy {
    pub fn depth(&self) -> usize {
        self.pairs.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|m| m.vertex_count()).collect()
    }
}

/// Decimates `depth` times by `factor`, each level to `ceil(N / factor)`
/// vertices.
pub fn build_hierarchy(mesh: &TriangleMesh, factor: usize, depth: usize) -> Result<MeshHierarchy> {
    if factor < 2 || depth < 1 {
        return Err(Error::ConfigMismatch(format!(
            "hierarchy needs factor >= 2 and depth >= 1, got factor {factor}, depth {depth}"
        )));
    }
    let mut levels = vec![mesh.clone()];
    let mut pairs = Vec::with_capacity(depth);
    for _ in 0..depth {
        let fine = levels.last().expect("at least one level");
        let target = fine.vertex_count().div_ceil(factor);
        let d = decimate_quadric(fine, target)?;
        let q_up = build_upsampling(fine, &d.coarse, &d.q_down)?;
        pairs.push(SamplingPair {
            fine_count: fine.vertex_count(),
            coarse_count: d.coarse.vertex_count(),
            q_down: d.q_down,
            q_up,
            coarse_mesh: d.coarse.clone(),
        });
        levels.push(d.coarse);
    }
    let laplacians = levels
        .iter()
        .map(ScaledLaplacian::for_mesh)
        .collect::<Result<Vec<_>>>()?;
    Ok(MeshHierarchy {
        levels,
        pairs,
        laplacians,
    })
}
