//! The demo operations as plain Rust, so they can be tested natively.

use std::sync::Arc;

use meshgcn::eval::{bidirectional_error, procrustes_align, region_mask_from_landmarks, AlignMode};
use meshgcn::mesh::primitives::toy_head;
use meshgcn::mesh::{ScaledLaplacian, Vec3};
use meshgcn::nn::ChebConv;
use meshgcn::synth::{build_toy_shape_model, render, GrayImage, LinearShapeModel, RenderConfig, RenderMode};
use meshgcn::{Result, TriangleMesh};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

/// Quadrature nodes for the Chebyshev expansion of the smoothing kernel.
const NODES: usize = 64;

pub struct Scene {
    template: TriangleMesh,
    model: LinearShapeModel,
    laplacian: ScaledLaplacian,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmoothReport {
    pub noisy_mee: f64,
    pub smoothed_mee: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub combined: f64,
    pub reconstruction_to_scan: f64,
    pub scan_to_reconstruction: f64,
    pub landmark_rms: f64,
    pub masked_vertices: usize,
    pub histogram: Vec<usize>,
    pub bin_width: f64,
}

impl Scene {
    pub fn new(subdivisions: u32, num_modes: usize, seed: u64) -> Result<Self> {
        let template = toy_head(subdivisions);
        let model = build_toy_shape_model(&template, num_modes, seed)?;
        let laplacian = ScaledLaplacian::for_mesh(&template)?;
        Ok(Self {
            template,
            model,
            laplacian,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertex_count()
    }

    pub fn num_modes(&self) -> usize {
        self.model.num_modes()
    }

    /// Shape for mode coefficients in standard deviations. Missing entries
    /// count as zero.
    pub fn face(&self, coefficients: &[f64]) -> Result<TriangleMesh> {
        let mut c = vec![0.0; self.num_modes()];
        for (a, b) in c.iter_mut().zip(coefficients) {
            *a = *b;
        }
        self.template.with_flat_vertices(&self.model.sample_shape(&c)?)
    }

    pub fn render(&self, mesh: &TriangleMesh, size: usize, depth: bool) -> Result<GrayImage> {
        let config = RenderConfig {
            mode: if depth { RenderMode::Depth } else { RenderMode::GrayscaleLambertian },
            ..RenderConfig::frontal(size)
        };
        render(mesh, &config)
    }

    /// Adds Gaussian noise of `sigma` mm to every coordinate, then low-pass
    /// filters the displacement from the template with an order-`order`
    /// Chebyshev approximation of `exp(-tau * (x + 1))` on the scaled
    /// spectrum `x` of the template.
    pub fn smooth(&self, coefficients: &[f64], sigma: f64, order: usize, tau: f64, seed: u64) -> Result<(TriangleMesh, SmoothReport)> {
        let clean = self.face(coefficients)?.flat_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        let noisy: Vec<f64> = clean.iter().map(|v| v + normal.sample(&mut rng)).collect();
        let c = heat_coefficients(order, tau);
        let mut weight = vec![0.0; (order + 1) * 9];
        for (k, ck) in c.iter().enumerate() {
            for i in 0..3 {
                weight[(k * 3 + i) * 3 + i] = *ck;
            }
        }
        let mut layer = ChebConv::new(Arc::new(self.laplacian.scaled.clone()), order, 3, 3, &mut ChaCha8Rng::seed_from_u64(0));
        layer.set_weights(&weight, &[0.0; 3])?;
        // filter the displacement from the template, not the coordinates:
        // the head itself is low- but not zero-frequency and would shrink
        let base = self.template.flat_vertices();
        let offset: Vec<f64> = noisy.iter().zip(&base).map(|(v, b)| v - b).collect();
        let (filtered, _) = layer.forward(&offset, 1)?;
        let smoothed: Vec<f64> = filtered.iter().zip(&base).map(|(v, b)| v + b).collect();
        let report = SmoothReport {
            noisy_mee: meshgcn::autoencoder::mean_euclidean_error(&noisy, &clean)?,
            smoothed_mee: meshgcn::autoencoder::mean_euclidean_error(&smoothed, &clean)?,
            coefficients: c,
        };
        Ok((self.template.with_flat_vertices(&smoothed)?, report))
    }

    /// Scores face `a` against face `b` moved by a rotation of `degrees`
    /// about the vertical axis and a shift along x, after landmark
    /// alignment.
    pub fn compare(&self, a: &[f64], b: &[f64], degrees: f64, shift: f64, margin: f64) -> Result<CompareReport> {
        let recon = self.face(a)?;
        let (s, c) = degrees.to_radians().sin_cos();
        let scan_vertices: Vec<Vec3> = self
            .face(b)?
            .vertices()
            .iter()
            .map(|p| [c * p[0] + s * p[2] + shift, p[1], -s * p[0] + c * p[2]])
            .collect();
        let scan = recon.with_vertices(scan_vertices)?;
        let source = recon.landmark_positions();
        let target = scan.landmark_positions();
        let transform = procrustes_align(&source, &target, AlignMode::Rigid)?;
        let aligned = transform.apply_mesh(&recon)?;
        let mask = region_mask_from_landmarks(&aligned, &target, margin)?;
        let report = bidirectional_error(&aligned, &scan, &mask)?;
        Ok(CompareReport {
            combined: report.combined,
            reconstruction_to_scan: report.reconstruction_to_scan,
            scan_to_reconstruction: report.scan_to_reconstruction,
            landmark_rms: transform.rms_residual(&source, &target),
            masked_vertices: mask.count(),
            histogram: report.histogram.counts,
            bin_width: report.histogram.bin_width,
        })
    }
}

/// Chebyshev coefficients `w_k` with `sum_k w_k T_k(x) ~= exp(-tau (x + 1))`
/// on `[-1, 1]`, by Gauss-Chebyshev quadrature.
pub fn heat_coefficients(order: usize, tau: f64) -> Vec<f64> {
    let g = |x: f64| (-tau * (x + 1.0)).exp();
    (0..=order)
        .map(|k| {
            let sum: f64 = (0..NODES)
                .map(|j| {
                    let theta = std::f64::consts::PI * (j as f64 + 0.5) / NODES as f64;
                    g(theta.cos()) * (k as f64 * theta).cos()
                })
                .sum();
            let c = 2.0 * sum / NODES as f64;
            if k == 0 {
                c / 2.0
            } else {
                c
            }
        })
        .collect()
}

/// Gray pixels in `[0, 1]` (or depth, normalized to its maximum) as RGBA.
pub fn to_rgba(image: &GrayImage) -> Vec<u8> {
    let max = image.pixels.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 1.0 { 1.0 / max } else { 1.0 };
    image
        .pixels
        .iter()
        .flat_map(|&p| {
            let v = (p * scale * 255.0).round().clamp(0.0, 255.0) as u8;
            [v, v, v, 255]
        })
        .collect()
}
