#![allow(dead_code)]

use meshgcn::mesh::primitives;
use meshgcn::{CsrMatrix, TriangleMesh};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

/// Small random mesh: a grid with random diagonals and a few quads dropped,
/// or an icosphere / cube fixture. At most 50 vertices.
pub fn random_mesh<R: Rng>(rng: &mut R) -> TriangleMesh {
    match rng.random_range(0..6) {
        0 => primitives::icosphere(rng.random_range(0..2), 1.0),
        1 => primitives::cube_grid(rng.random_range(1..3), 1.0),
        _ => loop {
            let nx = rng.random_range(2..8);
            let ny = rng.random_range(2..8);
            let mut faces = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    if rng.random_bool(0.15) {
                        continue;
                    }
                    let a = j * nx + i;
                    let (b, c, d) = (a + 1, a + nx, a + nx + 1);
                    if rng.random_bool(0.5) {
                        faces.push([a, b, d]);
                        faces.push([a, d, c]);
                    } else {
                        faces.push([a, b, c]);
                        faces.push([b, d, c]);
                    }
                }
            }
            let vertices = (0..nx * ny)
                .map(|k| {
                    [
                        (k % nx) as f64 + rng.random_range(-0.2..0.2),
                        (k / nx) as f64 + rng.random_range(-0.2..0.2),
                        rng.random_range(-0.3..0.3),
                    ]
                })
                .collect();
            if let Ok(m) = TriangleMesh::new(vertices, faces) {
                return m;
            }
        },
    }
}

pub fn dense(m: &CsrMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), &m.to_dense())
}

/// Eigenvalues (ascending) and eigenvectors of a symmetric sparse matrix.
pub fn dense_eigen(m: &CsrMatrix) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(dense(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.rows(), m.rows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
    num / den
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`.
pub fn grad_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
