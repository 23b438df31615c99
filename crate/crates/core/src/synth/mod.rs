//! Synthetic training data: a linear shape model standing in for a
//! statistical face model, a software rasterizer for the paired images, and
//! seeded dataset generation.

mod dataset;
mod image;
mod render;

pub use dataset::{generate_dataset, sample_coefficients, Sample};
pub use image::GrayImage;
pub use render::{render, Camera, RenderConfig, RenderMode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{cross, dot, normalize, TriangleMesh, Vec3};

/// Per-vertex RMS displacement, in mm, of the first mode at one standard
/// deviation. Later modes decay by `MODE_DECAY` each.
pub const FIRST_MODE_RMS_MM: f64 = 3.0;
pub const MODE_DECAY: f64 = 0.8;
const MAX_ATTEMPTS: usize = 10;

/// Mean shape plus orthonormal deformation modes with per-mode standard
/// deviations. Shapes are flat `N x 3` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearShapeModel {
    pub mean_shape: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
    pub stddevs: Vec<f64>,
}

impl LinearShapeModel {
    pub fn vertex_count(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    /// `mean + sum_i c_i sigma_i mode_i`.
    pub fn sample_shape(&self, coefficients: &[f64]) -> Result<Vec<f64>> {
        if coefficients.len() != self.modes.len() {
            return Err(Error::ShapeMismatch(format!(
                "model has {} modes, got {} coefficients",
                self.modes.len(),
                coefficients.len()
            )));
        }
        let mut shape = self.mean_shape.clone();
        for ((mode, sigma), c) in self.modes.iter().zip(&self.stddevs).zip(coefficients) {
            let a = c * sigma;
            for (s, m) in shape.iter_mut().zip(mode) {
                *s += a * m;
            }
        }
        Ok(shape)
    }

    /// Inverse of [`sample_shape`](Self::sample_shape) for shapes inside the
    /// model span.
    pub fn project(&self, shape: &[f64]) -> Result<Vec<f64>> {
        if shape.len() != self.mean_shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} coordinates, got {}",
                self.mean_shape.len(),
                shape.len()
            )));
        }
        Ok(self
            .modes
            .iter()
            .zip(&self.stddevs)
            .map(|(mode, sigma)| {
                let d: f64 = shape
                    .iter()
                    .zip(&self.mean_shape)
                    .zip(mode)
                    .map(|((s, m), u)| (s - m) * u)
                    .sum();
                d / sigma
            })
            .collect())
    }
}

/// Builds a toy shape model on `base`: smooth seeded deformation fields
/// (low-frequency sinusoids along the vertex normals plus a weaker tangential
/// swirl), orthonormalized by Gram-Schmidt.
///
/// Mode `i` has standard deviation `FIRST_MODE_RMS_MM * MODE_DECAY^i * sqrt(N)`
/// so that one standard deviation moves vertices by the stated RMS amount.
/// If the fields turn out linearly dependent the next seed is tried, up to
/// ten times.
pub fn build_toy_shape_model(base: &TriangleMesh, num_modes: usize, seed: u64) -> Result<LinearShapeModel> {
    let n = base.vertex_count();
    if num_modes > 3 * n {
        return Err(Error::ConfigMismatch(format!(
            "{num_modes} modes requested for a mesh with {} degrees of freedom",
            3 * n
        )));
    }
    let mean_shape = base.flat_vertices();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        if let Some(modes) = orthonormal_fields(base, num_modes, &mut rng) {
            let stddevs = (0..num_modes)
                .map(|i| FIRST_MODE_RMS_MM * MODE_DECAY.powi(i as i32) * (n as f64).sqrt())
                .collect();
            return Ok(LinearShapeModel {
                mean_shape,
                modes,
                stddevs,
            });
        }
    }
    Err(Error::RankDeficiency {
        attempts: MAX_ATTEMPTS,
    })
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n2 = dot(v, v);
        if n2 > 1e-4 && n2 <= 1.0 {
            return normalize(v);
        }
    }
}

fn deformation_field(base: &TriangleMesh, normals: &[Vec3], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = base.vertex_count() as f64;
    let mut centroid = [0.0; 3];
    for v in base.vertices() {
        for k in 0..3 {
            centroid[k] += v[k] / n;
        }
    }
    let radius = (base
        .vertices()
        .iter()
        .map(|v| (0..3).map(|k| (v[k] - centroid[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n)
        .sqrt()
        .max(f64::MIN_POSITIVE);

    let normal_dir = random_unit(rng);
    let tangent_dir = random_unit(rng);
    let normal_freq = rng.random_range(0.5..2.0);
    let tangent_freq = rng.random_range(0.5..2.0);
    let normal_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let tangent_phase = rng.random_range(0.0..std::f64::consts::TAU);

    let mut field = Vec::with_capacity(base.vertex_count() * 3);
    for (v, normal) in base.vertices().iter().zip(normals) {
        let p = [
            (v[0] - centroid[0]) / radius,
            (v[1] - centroid[1]) / radius,
            (v[2] - centroid[2]) / radius,
        ];
        let bump = (std::f64::consts::PI * normal_freq * dot(normal_dir, p) + normal_phase).sin();
        let swirl = 0.3 * (std::f64::consts::PI * tangent_freq * dot(tangent_dir, p) + tangent_phase).sin();
        let tangent = normalize(cross(*normal, tangent_dir));
        for k in 0..3 {
            field.push(bump * normal[k] + swirl * tangent[k]);
        }
    }
    field
}

fn orthonormal_fields(base: &TriangleMesh, count: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<f64>>> {
    let normals = base.vertex_normals();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut f = deformation_field(base, &normals, rng);
        let original = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = f.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in f.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 1e-6 * original) {
            return None;
        }
        f.iter_mut().for_each(|x| *x /= norm);
        basis.push(f);
    }
    Some(basis)
}
