use serde::{Deserialize, Serialize};

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Relative residual at which the eigenvalue iteration stops.
pub const POWER_ITERATION_TOLERANCE: f64 = 1e-9;
/// Largest Krylov dimension (matrix-vector products) before giving up.
pub const POWER_ITERATION_CAP: usize = 10_000;

/// Normalized Laplacian of a mesh together with its rescaled version
/// `2 L / lambda_max - I`, whose spectrum lies in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledLaplacian {
    pub laplacian: CsrMatrix,
    pub lambda_max: f64,
    pub scaled: CsrMatrix,
}

impl ScaledLaplacian {
    /// Adjacency, normalized Laplacian, `lambda_max`, rescale.
    pub fn for_mesh(mesh: &TriangleMesh) -> Result<Self> {
        let adjacency = build_adjacency(mesh)?;
        let laplacian = normalized_laplacian(&adjacency)?;
        let lambda_max = largest_eigenvalue(&laplacian)?;
        scale_laplacian(laplacian, lambda_max)
    }

    pub fn size(&self) -> usize {
        self.scaled.rows()
    }
}

/// Binary vertex adjacency: `A[i][j] = 1` iff `i` and `j` share a face edge.
pub fn build_adjacency(mesh: &TriangleMesh) -> Result<CsrMatrix> {
    let n = mesh.vertex_count();
    let triplets = mesh
        .edges()
        .into_iter()
        .flat_map(|(a, b)| [(a, b, 1.0), (b, a, 1.0)]);
    let adjacency = CsrMatrix::from_triplets(n, n, triplets)?;
    if let Some(v) = (0..n).find(|&v| adjacency.row_nnz(v) == 0) {
        return Err(Error::IsolatedVertex(v));
    }
    Ok(adjacency)
}

/// `L = I - D^{-1/2} A D^{-1/2}`.
pub fn normalized_laplacian(adjacency: &CsrMatrix) -> Result<CsrMatrix> {
    let n = adjacency.rows();
    if adjacency.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "adjacency must be square, got {}x{}",
            n,
            adjacency.cols()
        )));
    }
    let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).map(|(_, v)| v).sum()).collect();
    if let Some(v) = degree.iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroDegree(v));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let off = adjacency
        .triplets()
        .filter(|&(r, c, _)| r != c)
        .map(|(r, c, v)| (r, c, -v * inv_sqrt[r] * inv_sqrt[c]));
    let diag = (0..n).map(|i| (i, i, 1.0));
    CsrMatrix::from_triplets(n, n, diag.chain(off))
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix.
///
/// The power sequence `x, Mx, M^2 x, ...` of a deterministic start vector is
/// orthonormalized as it is generated (Lanczos with full
/// reorthogonalization) and the largest Rayleigh-Ritz value over that Krylov
/// space is taken. Plain power iteration reads off only the last iterate and
/// needs tens of thousands of steps when the two largest eigenvalues are
/// close, which happens on decimated meshes.
///
/// The start vector is all-ones perturbed by a fixed sinusoid, since all-ones
/// lies in the null space of the Laplacian of any regular graph. Iteration
/// stops once the Ritz residual `||M v - theta v||` falls below
/// `POWER_ITERATION_TOLERANCE * theta`, which bounds the eigenvalue error by
/// the same amount, or when the Krylov space becomes invariant.
pub fn largest_eigenvalue(matrix: &CsrMatrix) -> Result<f64> {
    let n = matrix.rows();
    if matrix.cols() != n || n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "eigenvalue estimate needs a non-empty square matrix, got {}x{}",
            n,
            matrix.cols()
        )));
    }
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i + 1) as f64).sin()).collect();
    normalize(&mut q);
    let max_dim = n.min(POWER_ITERATION_CAP);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    for j in 0..max_dim {
        matrix.mul_dense_into(&q, 1, &mut w)?;
        let a = dot(&q, &w);
        basis.push(q);
        alpha.push(a);
        // two passes of Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        let b = dot(&w, &w).sqrt();
        let dim = j + 1;
        let invariant = b <= f64::EPSILON * a.abs().max(1.0);
        if invariant || dim == max_dim || dim % RITZ_CHECK_INTERVAL == 0 {
            let (theta, last) = top_ritz_pair(&alpha, &beta);
            if invariant || b * last.abs() <= POWER_ITERATION_TOLERANCE * theta.abs() || dim == n {
                return Ok(theta.max(0.0));
            }
        }
        beta.push(b);
        q = w.iter().map(|v| v / b).collect();
    }
    Err(Error::NoConvergence {
        iterations: max_dim,
    })
}

const RITZ_CHECK_INTERVAL: usize = 5;

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`, with the last component of its unit
/// eigenvector.
fn top_ritz_pair(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let m = alpha.len();
    let t = nalgebra::DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            alpha[r]
        } else if r + 1 == c {
            beta[r]
        } else if c + 1 == r {
            beta[c]
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::new(t);
    let (k, theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    (theta, eig.eigenvectors[(m - 1, k)])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// `2 L / lambda_max - I`.
pub fn scale_laplacian(laplacian: CsrMatrix, lambda_max: f64) -> Result<ScaledLaplacian> {
    if !(lambda_max > 0.0) {
        return Err(Error::NonPositiveLambda(lambda_max));
    }
    let identity = CsrMatrix::identity(laplacian.rows());
    let scaled = laplacian.add_scaled(2.0 / lambda_max, &identity, -1.0)?;
    Ok(ScaledLaplacian {
        laplacian,
        lambda_max,
        scaled,
    })
}
