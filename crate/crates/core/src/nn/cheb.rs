//! Chebyshev spectral graph convolution.
//!
//! Filters a signal on the graph with `sum_k T_k(L~) x W_k`, where `L~` is the
//! scaled Laplacian of the mesh level and `T_k` are Chebyshev polynomials
//! evaluated by the three-term recurrence on vectors. Each
//! `(order, in-channel, out-channel)` triple has its own weight and every
//! output channel a bias.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::linalg::{gemm, gemm_nt, gemm_tn};
use super::{check_len, Tensor};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct ChebConv {
    order: usize,
    in_channels: usize,
    out_channels: usize,
    /// `(K + 1) * F_in x F_out`, order-major.
    pub weight: Tensor,
    pub bias: Tensor,
    laplacian: Arc<CsrMatrix>,
}

/// Chebyshev basis of the forward input, `B * N x (K + 1) * F_in`.
#[derive(Debug, Clone)]
pub struct ChebCache {
    basis: Vec<f64>,
    batch: usize,
}

impl ChebConv {
    /// He-uniform weights, `+-sqrt(6 / (F_in (K + 1)))`, zero bias.
    pub fn new(
        laplacian: Arc<CsrMatrix>,
        order: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * (order + 1);
        let bound = (6.0 / fan_in as f64).sqrt();
        Self {
            order,
            in_channels,
            out_channels,
            weight: Tensor::uniform(vec![order + 1, in_channels, out_channels], bound, rng),
            bias: Tensor::parameter(vec![out_channels], vec![0.0; out_channels])
                .expect("length matches"),
            laplacian,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn vertex_count(&self) -> usize {
        self.laplacian.rows()
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    /// `T_0 x, ..., T_K x` for one sample, written into the strided basis rows.
    fn chebyshev_basis(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.vertex_count();
        let f = self.in_channels;
        let stride = (self.order + 1) * f;
        let scatter = |k: usize, t: &[f64], out: &mut [f64]| {
            for v in 0..n {
                out[v * stride + k * f..v * stride + (k + 1) * f].copy_from_slice(&t[v * f..(v + 1) * f]);
            }
        };
        scatter(0, x, out);
        if self.order == 0 {
            return Ok(());
        }
        let mut prev = x.to_vec();
        let mut cur = self.laplacian.mul_dense(x, f)?;
        scatter(1, &cur, out);
        let mut next = vec![0.0; n * f];
        for k in 2..=self.order {
            self.laplacian.mul_dense_into(&cur, f, &mut next)?;
            for (nx, p) in next.iter_mut().zip(&prev) {
                *nx = 2.0 * *nx - p;
            }
            scatter(k, &next, out);
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(())
    }

    /// `x: [B, N, F_in]` to `[B, N, F_out]`.
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, ChebCache)> {
        let n = self.vertex_count();
        let f = self.in_channels;
        check_len("chebconv input", x.len(), batch * n * f)?;
        let stride = (self.order + 1) * f;
        let mut basis = vec![0.0; batch * n * stride];
        for b in 0..batch {
            self.chebyshev_basis(
                &x[b * n * f..(b + 1) * n * f],
                &mut basis[b * n * stride..(b + 1) * n * stride],
            )?;
        }
        let rows = batch * n;
        let mut y = vec![0.0; rows * self.out_channels];
        for r in 0..rows {
            y[r * self.out_channels..(r + 1) * self.out_channels].copy_from_slice(self.bias.values());
        }
        gemm(rows, stride, self.out_channels, &basis, self.weight.values(), 1.0, &mut y);
        Ok((y, ChebCache { basis, batch }))
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ChebCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        let n = self.vertex_count();
        let f = self.in_channels;
        let fo = self.out_channels;
        let stride = (self.order + 1) * f;
        let batch = cache.batch;
        let rows = batch * n;
        check_len("chebconv upstream gradient", grad_out.len(), rows * fo)?;

        gemm_tn(stride, rows, fo, &cache.basis, grad_out, 1.0, self.weight.grad_mut());
        let bias_grad = self.bias.grad_mut();
        for r in 0..rows {
            for (g, u) in bias_grad.iter_mut().zip(&grad_out[r * fo..(r + 1) * fo]) {
                *g += u;
            }
        }

        // gradient w.r.t. each basis term, then fold back with Clenshaw's
        // recurrence: sum_k T_k(L~) c_k, using the symmetry of L~
        let mut grad_basis = vec![0.0; rows * stride];
        gemm_nt(rows, fo, stride, grad_out, self.weight.values(), 0.0, &mut grad_basis);
        let mut grad_x = vec![0.0; rows * f];
        for b in 0..batch {
            let coeff = |k: usize| -> Vec<f64> {
                let mut c = vec![0.0; n * f];
                for v in 0..n {
                    let row = (b * n + v) * stride;
                    c[v * f..(v + 1) * f].copy_from_slice(&grad_basis[row + k * f..row + (k + 1) * f]);
                }
                c
            };
            let out = &mut grad_x[b * n * f..(b + 1) * n * f];
            let mut b1 = vec![0.0; n * f];
            let mut b2 = vec![0.0; n * f];
            let mut tmp = vec![0.0; n * f];
            for k in (1..=self.order).rev() {
                self.laplacian.mul_dense_into(&b1, f, &mut tmp)?;
                let ck = coeff(k);
                for i in 0..n * f {
                    tmp[i] = ck[i] + 2.0 * tmp[i] - b2[i];
                }
                std::mem::swap(&mut b2, &mut b1);
                std::mem::swap(&mut b1, &mut tmp);
            }
            let c0 = coeff(0);
            if self.order == 0 {
                out.copy_from_slice(&c0);
            } else {
                self.laplacian.mul_dense_into(&b1, f, &mut tmp)?;
                for i in 0..n * f {
                    out[i] = c0[i] + tmp[i] - b2[i];
                }
            }
        }
        Ok(grad_x)
    }

    pub fn set_weights(&mut self, weight: &[f64], bias: &[f64]) -> Result<()> {
        if weight.len() != self.weight.len() || bias.len() != self.bias.len() {
            return Err(Error::ShapeMismatch("chebconv parameter sizes".into()));
        }
        self.weight.assign(weight)?;
        self.bias.assign(bias)
    }
}
