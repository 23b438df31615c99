use rand_chacha::ChaCha8Rng;

use super::linalg::{gemm, gemm_nt, gemm_tn};
use super::{check_len, Tensor};
use crate::error::Result;

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Vec<f64>,
    batch: usize,
}

impl Dense {
    /// He-uniform weights, `+-sqrt(6 / F_in)`, zero bias.
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / in_features as f64).sqrt();
        Self {
            weight: Tensor::uniform(vec![in_features, out_features], bound, rng),
            bias: Tensor::parameter(vec![out_features], vec![0.0; out_features])
                .expect("length matches"),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, DenseCache)> {
        let (fi, fo) = (self.in_features(), self.out_features());
        check_len("dense input", x.len(), batch * fi)?;
        let mut y = Vec::with_capacity(batch * fo);
        for _ in 0..batch {
            y.extend_from_slice(self.bias.values());
        }
        gemm(batch, fi, fo, x, self.weight.values(), 1.0, &mut y);
        Ok((
            y,
            DenseCache {
                input: x.to_vec(),
                batch,
            },
        ))
    }

    pub fn backward(&mut self, cache: &DenseCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        let (fi, fo) = (self.in_features(), self.out_features());
        let batch = cache.batch;
        check_len("dense upstream gradient", grad_out.len(), batch * fo)?;
        gemm_tn(fi, batch, fo, &cache.input, grad_out, 1.0, self.weight.grad_mut());
        let bias_grad = self.bias.grad_mut();
        for row in grad_out.chunks_exact(fo) {
            for (g, u) in bias_grad.iter_mut().zip(row) {
                *g += u;
            }
        }
        let mut grad_x = vec![0.0; batch * fi];
        gemm_nt(batch, fo, fi, grad_out, self.weight.values(), 0.0, &mut grad_x);
        Ok(grad_x)
    }
}
