//! Compressed sparse row matrices.
//!
//! Used for adjacency matrices, Laplacians, and the mesh down/up-sampling
//! operators. Row-major dense blocks (`rows x width`) are the multiplication
//! partners throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real matrix in CSR layout.
///
/// Column indices are strictly increasing within each row and no explicit
/// zeros are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// and entries that end up exactly zero are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::ShapeMismatch(format!(
                    "triplet ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        entries.sort_by_key(|a| (a.0, a.1));

        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut counts = vec![0usize; rows];
        let mut i = 0;
        while i < entries.len() {
            let (r, c, mut v) = entries[i];
            let mut j = i + 1;
            while j < entries.len() && entries[j].0 == r && entries[j].1 == c {
                v += entries[j].2;
                j += 1;
            }
            if v != 0.0 {
                col_indices.push(c);
                values.push(v);
                counts[r] += 1;
            }
            i = j;
        }
        for r in 0..rows {
            row_offsets[r + 1] = row_offsets[r] + counts[r];
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Reassembles a matrix from raw CSR arrays, validating the layout.
    pub fn from_raw(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |m: &str| Err(Error::Format(format!("invalid CSR arrays: {m}")));
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return bad("row offsets");
        }
        if col_indices.len() != values.len() || row_offsets[rows] != values.len() {
            return bad("entry count");
        }
        for r in 0..rows {
            let (a, b) = (row_offsets[r], row_offsets[r + 1]);
            if a > b {
                return bad("offsets not monotone");
            }
            for k in a..b {
                if col_indices[k] >= cols || (k > a && col_indices[k] <= col_indices[k - 1]) {
                    return bad("column indices");
                }
                if values[k] == 0.0 {
                    return bad("explicit zero");
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates over `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_offsets[r + 1] - self.row_offsets[r]
    }

    /// Entry lookup by binary search; zero when not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.cols, self.rows, self.triplets().map(|(r, c, v)| (c, r, v)))
            .expect("transpose keeps indices in range")
    }

    /// Returns `alpha * self + beta * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let lhs = self.triplets().map(|(r, c, v)| (r, c, alpha * v));
        let rhs = other.triplets().map(|(r, c, v)| (r, c, beta * v));
        Self::from_triplets(self.rows, self.cols, lhs.chain(rhs))
    }

    /// Sparse-sparse product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut triplets = Vec::new();
        for r in 0..self.rows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    triplets.push((r, c, a * b));
                }
            }
        }
        Self::from_triplets(self.rows, other.cols, triplets)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.rows];
        self.mul_dense_into(x, 1, &mut y)?;
        Ok(y)
    }

    /// `out = self * x` where `x` is a row-major `cols x width` block.
    pub fn mul_dense_into(&self, x: &[f64], width: usize, out: &mut [f64]) -> Result<()> {
        if x.len() != self.cols * width || out.len() != self.rows * width {
            return Err(Error::ShapeMismatch(format!(
                "sparse {}x{} times dense block of {} values (width {width})",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            dst.fill(0.0);
            for (c, v) in self.row(r) {
                let src = &x[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        Ok(())
    }

    pub fn mul_dense(&self, x: &[f64], width: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows * width];
        self.mul_dense_into(x, width, &mut out)?;
        Ok(out)
    }

    /// Applies the matrix independently to each of `batch` stacked blocks.
    pub fn mul_batched(&self, x: &[f64], batch: usize, width: usize) -> Result<Vec<f64>> {
        if x.len() != batch * self.cols * width {
            return Err(Error::ShapeMismatch(format!(
                "batched input has {} values, expected {}",
                x.len(),
                batch * self.cols * width
            )));
        }
        let mut out = vec![0.0; batch * self.rows * width];
        for b in 0..batch {
            let src = &x[b * self.cols * width..(b + 1) * self.cols * width];
            let dst = &mut out[b * self.rows * width..(b + 1) * self.rows * width];
            self.mul_dense_into(src, width, dst)?;
        }
        Ok(out)
    }

    /// Largest absolute difference from the transpose.
    pub fn symmetry_error(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    /// Row-major dense copy. Intended for small matrices and tests.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.triplets() {
            d[r * self.cols + c] = v;
        }
        d
    }
}
