//! Reconstruction accuracy against a reference surface: landmark Procrustes
//! alignment, point-to-surface distances in both directions over a common
//! facial region, and color-coded error maps.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{closest_point_on_triangle, distance_squared};
use crate::mesh::{Vec3, TriangleMesh};
use crate::util::atomic_write;

/// Default upper end of the error color ramp, in millimetres.
pub const DEFAULT_ERROR_CAP: f64 = 5.0;
/// Width of the report histogram bins, in millimetres.
pub const HISTOGRAM_BIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    Rigid,
    /// Rigid motion plus a uniform scale, for meshes in other units.
    Similarity,
}

/// `p -> scale * R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
    pub scale: f64,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        std::array::from_fn(|i| self.scale * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]) + self.translation[i])
    }

    pub fn apply_mesh(&self, mesh: &TriangleMesh) -> Result<TriangleMesh> {
        mesh.with_vertices(mesh.vertices().iter().map(|&v| self.apply(v)).collect())
    }

    /// Root-mean-square distance between transformed `source` and `target`.
    pub fn rms_residual(&self, source: &[Vec3], target: &[Vec3]) -> f64 {
        let sum: f64 = source
            .iter()
            .zip(target)
            .map(|(&s, &t)| distance_squared(self.apply(s), t))
            .sum();
        (sum / source.len().max(1) as f64).sqrt()
    }
}

/// Least-squares alignment of `source` onto `target` landmarks (Kabsch).
///
/// The rotation comes from the SVD of the cross-covariance, with the sign of
/// the last singular direction flipped when needed so that `det R = +1`; a
/// mirrored target therefore leaves a residual instead of being matched.
pub fn procrustes_align(source: &[Vec3], target: &[Vec3], mode: AlignMode) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} source landmarks vs {} target landmarks",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateLandmarks(format!(
            "need at least 3 landmarks, got {}",
            source.len()
        )));
    }
    let (sc, s_spread) = centered(source);
    let (tc, t_spread) = centered(target);
    check_spread(&s_spread, "source")?;
    check_spread(&t_spread, "target")?;

    let s_mean = mean(source);
    let t_mean = mean(target);
    let mut h = Matrix3::zeros();
    for (s, t) in sc.iter().zip(&tc) {
        h += s * t.transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let v = v_t.transpose();
    // V diag(1, 1, det(V U^T)) U^T, written with the third singular pair
    // rebuilt from the first two: it is arbitrary when only three landmarks
    // span a plane, and the cross products carry the sign correction.
    let (u1, u2, v1, v2) = (u.column(0), u.column(1), v.column(0), v.column(1));
    let rotation = v1 * u1.transpose() + v2 * u2.transpose() + v1.cross(&v2) * u1.cross(&u2).transpose();
    let den: f64 = sc.iter().map(|s| s.norm_squared()).sum();
    let scale_for = |r: &Matrix3<f64>| match mode {
        AlignMode::Rigid => 1.0,
        AlignMode::Similarity => sc.iter().zip(&tc).map(|(s, t)| t.dot(&(r * s))).sum::<f64>() / den,
    };
    let rotation = refine_rotation(rotation, scale_for(&rotation), &sc, &tc);
    let scale = scale_for(&rotation);
    let translation = Vector3::from(t_mean) - scale * rotation * Vector3::from(s_mean);
    Ok(RigidTransform {
        rotation: std::array::from_fn(|i| std::array::from_fn(|j| rotation[(i, j)])),
        translation: [translation[0], translation[1], translation[2]],
        scale,
    })
}

/// One Gauss-Newton step on the rotation group from the residuals of `r`.
/// The SVD solution loses accuracy on thin landmark sets (a sliver triangle
/// pins the rotation about its long axis only weakly); the residuals are
/// small and accurately computed, so the correction restores it. At a
/// least-squares optimum the step vanishes.
fn refine_rotation(r: Matrix3<f64>, scale: f64, sc: &[Vector3<f64>], tc: &[Vector3<f64>]) -> Matrix3<f64> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (s, t) in sc.iter().zip(tc) {
        let p = scale * r * s;
        a += Matrix3::identity() * p.norm_squared() - p * p.transpose();
        b += p.cross(&(t - p));
    }
    match a.cholesky() {
        Some(c) => Rotation3::new(c.solve(&b)).matrix() * r,
        None => r,
    }
}

fn mean(points: &[Vec3]) -> Vec3 {
    let n = points.len() as f64;
    std::array::from_fn(|k| points.iter().map(|p| p[k]).sum::<f64>() / n)
}

/// Centered points and the singular values of their scatter.
fn centered(points: &[Vec3]) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    let m = Vector3::from(mean(points));
    let c: Vec<Vector3<f64>> = points.iter().map(|p| Vector3::from(*p) - m).collect();
    let mut scatter = Matrix3::zeros();
    for v in &c {
        scatter += v * v.transpose();
    }
    let mut sv = scatter.symmetric_eigenvalues();
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    (c, sv)
}

fn check_spread(spread: &Vector3<f64>, which: &str) -> Result<()> {
    if !(spread[0] > 1e-24) {
        return Err(Error::DegenerateLandmarks(format!("{which} landmarks coincide")));
    }
    if spread[1] <= 1e-12 * spread[0] {
        return Err(Error::DegenerateLandmarks(format!("{which} landmarks are collinear")));
    }
    Ok(())
}

/// Distance from each point to the closest point of the mesh surface,
/// treating the faces as a triangle soup.
pub fn point_to_surface(points: &[Vec3], mesh: &TriangleMesh) -> Result<Vec<f64>> {
    if mesh.face_count() == 0 {
        return Err(Error::EmptyMesh);
    }
    let v = mesh.vertices();
    let tris: Vec<[Vec3; 3]> = mesh.faces().iter().map(|f| [v[f[0]], v[f[1]], v[f[2]]]).collect();
    Ok(points
        .par_iter()
        .map(|&p| {
            tris.iter()
                .map(|t| {
                    let (q, _) = closest_point_on_triangle(p, t[0], t[1], t[2]);
                    distance_squared(p, q)
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

/// Common evaluation region: the convex hull of the landmarks seen from the
/// front (projected on the x-y plane), grown by `margin`, restricted to
/// points no further back (larger z) than the deepest landmark plus
/// `margin`. Faces look toward -z, so the restriction drops the back of the
/// head that projects into the same hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    /// Counter-clockwise hull of the projected landmarks.
    pub boundary: Vec<[f64; 2]>,
    pub margin: f64,
    pub max_depth: f64,
    /// Membership of each vertex of the mesh the mask was built on.
    pub selected: Vec<bool>,
}

impl RegionMask {
    pub fn contains(&self, p: Vec3) -> bool {
        if p[2] > self.max_depth {
            return false;
        }
        let q = [p[0], p[1]];
        let n = self.boundary.len();
        let inside = (0..n).all(|i| orient(self.boundary[i], self.boundary[(i + 1) % n], q) >= 0.0);
        inside
            || (0..n).any(|i| {
                segment_distance(q, self.boundary[i], self.boundary[(i + 1) % n]) <= self.margin
            })
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

pub fn region_mask_from_landmarks(mesh: &TriangleMesh, landmarks: &[Vec3], margin: f64) -> Result<RegionMask> {
    if landmarks.len() < 3 {
        return Err(Error::DegenerateLandmarks(format!(
            "need at least 3 landmarks, got {}",
            landmarks.len()
        )));
    }
    if !(margin >= 0.0) {
        return Err(Error::ConfigMismatch(format!("mask margin must be non-negative, got {margin}")));
    }
    let boundary = convex_hull(landmarks.iter().map(|p| [p[0], p[1]]).collect());
    let extent = landmarks
        .iter()
        .flat_map(|p| [p[0].abs(), p[1].abs()])
        .fold(0.0, f64::max);
    let area = polygon_area(&boundary);
    if boundary.len() < 3 || area <= 1e-12 * extent * extent {
        return Err(Error::DegenerateLandmarks(
            "landmarks are collinear in the frontal projection".into(),
        ));
    }
    let max_depth = landmarks.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max) + margin;
    let mut mask = RegionMask {
        boundary,
        margin,
        max_depth,
        selected: Vec::new(),
    };
    mask.selected = mesh.vertices().iter().map(|&v| mask.contains(v)).collect();
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((ap[0] - t * ab[0]).powi(2) + (ap[1] - t * ab[1]).powi(2)).sqrt()
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
        / 2.0
}

/// Andrew's monotone chain; counter-clockwise, collinear points dropped.
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub max: f64,
}

impl ErrorStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyMask);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        };
        Ok(Self {
            mean,
            std: var.sqrt(),
            median,
            max: *sorted.last().expect("non-empty"),
        })
    }
}

/// Counts of masked reconstruction-side errors in `HISTOGRAM_BIN` wide bins
/// from 0; the last bin collects everything at or above `cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: &[f64], cap: f64) -> Self {
        let bins = (cap / HISTOGRAM_BIN).ceil().max(1.0) as usize;
        let mut counts = vec![0; bins + 1];
        for v in values {
            let b = ((v / HISTOGRAM_BIN).floor() as usize).min(bins);
            counts[b] += 1;
        }
        Self {
            bin_width: HISTOGRAM_BIN,
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub reconstruction_id: String,
    pub scan_id: String,
    pub transform: Option<RigidTransform>,
    /// Distance from every reconstruction vertex to the scan surface,
    /// masked or not.
    pub per_vertex: Vec<f64>,
    pub mask: Vec<bool>,
    pub reconstruction_to_scan: f64,
    pub scan_to_reconstruction: f64,
    /// Average of the two directional means.
    pub combined: f64,
    pub masked_stats: ErrorStats,
    pub histogram: Histogram,
    pub scan_vertices_used: usize,
}

impl EvaluationReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// Point-to-surface errors in both directions over the region `mask`. The
/// meshes must already be aligned. Reconstruction vertices are taken from
/// `mask.selected`, scan vertices from the mask geometry.
pub fn bidirectional_error(reconstruction: &TriangleMesh, scan: &TriangleMesh, mask: &RegionMask) -> Result<EvaluationReport> {
    if mask.selected.len() != reconstruction.vertex_count() {
        return Err(Error::ShapeMismatch(format!(
            "mask over {} vertices for a {}-vertex reconstruction",
            mask.selected.len(),
            reconstruction.vertex_count()
        )));
    }
    let per_vertex = point_to_surface(reconstruction.vertices(), scan)?;
    let masked: Vec<f64> = per_vertex
        .iter()
        .zip(&mask.selected)
        .filter(|(_, &s)| s)
        .map(|(&d, _)| d)
        .collect();
    let scan_points: Vec<Vec3> = scan.vertices().iter().copied().filter(|&p| mask.contains(p)).collect();
    if masked.is_empty() || scan_points.is_empty() {
        return Err(Error::EmptyMask);
    }
    let back = point_to_surface(&scan_points, reconstruction)?;
    let forward_mean = masked.iter().sum::<f64>() / masked.len() as f64;
    let back_mean = back.iter().sum::<f64>() / back.len() as f64;
    Ok(EvaluationReport {
        reconstruction_id: String::new(),
        scan_id: String::new(),
        transform: None,
        masked_stats: ErrorStats::of(&masked)?,
        histogram: Histogram::of(&masked, DEFAULT_ERROR_CAP),
        per_vertex,
        mask: mask.selected.clone(),
        reconstruction_to_scan: forward_mean,
        scan_to_reconstruction: back_mean,
        combined: (forward_mean + back_mean) / 2.0,
        scan_vertices_used: scan_points.len(),
    })
}

/// Linear ramp from blue `(0, 0, 255)` at 0 to red `(255, 0, 0)` at `cap`,
/// clamped outside `[0, cap]`.
pub fn error_color(error: f64, cap: f64) -> [u8; 3] {
    let t = if cap > 0.0 { (error / cap).clamp(0.0, 1.0) } else { 1.0 };
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorSidecar {
    cap: f64,
    errors: Vec<f64>,
}

/// Writes the mesh as a colored PLY and the raw errors to a JSON file next to
/// it (same stem, `.json`).
pub fn export_error_map(mesh: &TriangleMesh, errors: &[f64], path: impl AsRef<Path>, cap: f64) -> Result<()> {
    let path = path.as_ref();
    if errors.len() != mesh.vertex_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} errors for {} vertices",
            errors.len(),
            mesh.vertex_count()
        )));
    }
    let colors: Vec<[u8; 3]> = errors.iter().map(|&e| error_color(e, cap)).collect();
    atomic_write(path, crate::mesh::write_ply(mesh, Some(&colors)).as_bytes())?;
    let sidecar = ErrorSidecar {
        cap,
        errors: errors.to_vec(),
    };
    atomic_write(&path.with_extension("json"), serde_json::to_string(&sidecar)?.as_bytes())
}
