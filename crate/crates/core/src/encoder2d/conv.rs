use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::linalg::{gemm, gemm_nt, gemm_tn};
use crate::nn::Tensor;

/// 2D cross-correlation over `[B, H, W, C]` tensors with zero padding,
/// computed as an im2col matrix times the `[k, k, C_in, C_out]` kernel.
#[derive(Debug, Clone)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct Conv2dCache {
    columns: Vec<f64>,
    batch: usize,
    height: usize,
    width: usize,
}

impl Conv2d {
    /// He-uniform weights, zero bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1, "kernel and stride must be positive");
        let fan_in = kernel * kernel * in_channels;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Tensor::uniform(
                vec![kernel, kernel, in_channels, out_channels],
                (6.0 / fan_in as f64).sqrt(),
                rng,
            ),
            bias: Tensor::parameter(vec![out_channels], vec![0.0; out_channels]).expect("length matches"),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (height + 2 * self.padding, width + 2 * self.padding);
        if ph < self.kernel || pw < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} input is smaller than a {k}x{k} kernel",
                k = self.kernel
            )));
        }
        Ok(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    fn im2col(&self, x: &[f64], batch: usize, height: usize, width: usize) -> Result<Vec<f64>> {
        let (ho, wo) = self.output_size(height, width)?;
        let (k, c) = (self.kernel, self.in_channels);
        let row_len = k * k * c;
        let mut cols = vec![0.0; batch * ho * wo * row_len];
        for b in 0..batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * row_len;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= width as isize {
                                continue;
                            }
                            let src = ((b * height + iy as usize) * width + ix as usize) * c;
                            let dst = row + (ky * k + kx) * c;
                            cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                        }
                    }
                }
            }
        }
        Ok(cols)
    }

    /// `[B, H, W, C_in]` to `[B, H_out, W_out, C_out]`.
    pub fn forward(&self, x: &[f64], batch: usize, height: usize, width: usize) -> Result<(Vec<f64>, Conv2dCache)> {
        if x.len() != batch * height * width * self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv2d input has {} values, expected {}x{}x{}x{}",
                x.len(),
                batch,
                height,
                width,
                self.in_channels
            )));
        }
        let (ho, wo) = self.output_size(height, width)?;
        let columns = self.im2col(x, batch, height, width)?;
        let rows = batch * ho * wo;
        let fo = self.out_channels;
        let mut y = Vec::with_capacity(rows * fo);
        for _ in 0..rows {
            y.extend_from_slice(self.bias.values());
        }
        let row_len = self.kernel * self.kernel * self.in_channels;
        gemm(rows, row_len, fo, &columns, self.weight.values(), 1.0, &mut y);
        Ok((
            y,
            Conv2dCache {
                columns,
                batch,
                height,
                width,
            },
        ))
    }

    /// Accumulates kernel and bias gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &Conv2dCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        let (batch, height, width) = (cache.batch, cache.height, cache.width);
        let (ho, wo) = self.output_size(height, width)?;
        let rows = batch * ho * wo;
        let fo = self.out_channels;
        if grad_out.len() != rows * fo {
            return Err(Error::ShapeMismatch("conv2d upstream gradient".into()));
        }
        let (k, c) = (self.kernel, self.in_channels);
        let row_len = k * k * c;
        gemm_tn(row_len, rows, fo, &cache.columns, grad_out, 1.0, self.weight.grad_mut());
        let bias_grad = self.bias.grad_mut();
        for row in grad_out.chunks_exact(fo) {
            for (g, u) in bias_grad.iter_mut().zip(row) {
                *g += u;
            }
        }
        let mut grad_cols = vec![0.0; rows * row_len];
        gemm_nt(rows, fo, row_len, grad_out, self.weight.values(), 0.0, &mut grad_cols);
        // col2im: scatter-add every patch entry back to its source pixel
        let mut grad_x = vec![0.0; batch * height * width * c];
        for b in 0..batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * row_len;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= width as isize {
                                continue;
                            }
                            let dst = ((b * height + iy as usize) * width + ix as usize) * c;
                            let src = row + (ky * k + kx) * c;
                            for ch in 0..c {
                                grad_x[dst + ch] += grad_cols[src + ch];
                            }
                        }
                    }
                }
            }
        }
        Ok(grad_x)
    }
}

/// Mean over the spatial positions of `[B, H, W, C]`.
pub fn global_average_pool(x: &[f64], batch: usize, positions: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * channels];
    for b in 0..batch {
        for p in 0..positions {
            let src = (b * positions + p) * channels;
            for ch in 0..channels {
                out[b * channels + ch] += x[src + ch];
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= positions as f64);
    out
}

pub fn global_average_pool_backward(grad: &[f64], batch: usize, positions: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * positions * channels];
    for b in 0..batch {
        for p in 0..positions {
            let dst = (b * positions + p) * channels;
            for ch in 0..channels {
                out[dst + ch] = grad[b * channels + ch] / positions as f64;
            }
        }
    }
    out
}
