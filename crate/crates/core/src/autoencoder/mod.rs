//! Mesh autoencoder over a [`MeshHierarchy`].
//!
//! The encoder alternates Chebyshev convolutions (with ReLU) and
//! down-sampling, then flattens the coarsest level into a dense layer that
//! produces the latent code. The decoder mirrors it: a dense layer back to
//! the coarsest level, up-sampling followed by Chebyshev convolutions, and a
//! final linear convolution on the finest mesh that outputs coordinates.
//!
//! Shapes are centred by the training mean and divided by one global scale
//! before entering the network; both are stored with the model.

mod train;

pub use train::{train_stage1, EpochRecord, Stage1Trainer, TrainHistory};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_forward, ChebCache, ChebConv, Dense, DenseCache, Parameters, Tensor};
use crate::sampling::MeshHierarchy;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub latent_size: usize,
    pub cheb_order: usize,
    pub sampling_factor: usize,
    /// Encoder layers counting the dense one; `encoder_levels - 1`
    /// convolutions are followed by down-sampling.
    pub encoder_levels: usize,
    /// Output width of each down-sampling convolution, finest first.
    pub channels: Vec<usize>,
    /// ReLU on the latent code itself. Off by default: with few samples per
    /// epoch it tends to switch latent units off for good.
    pub latent_relu: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent_size: 64,
            cheb_order: 9,
            sampling_factor: 4,
            encoder_levels: 5,
            channels: vec![16, 32, 32, 64],
            latent_relu: false,
            epochs: 300,
            batch_size: 16,
            learning_rate: 0.008,
            lr_decay: 0.98,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 0,
        }
    }
}

impl AutoencoderConfig {
    /// Small setting for a 642-vertex template: two down-sampling levels.
    pub fn toy() -> Self {
        Self {
            latent_size: 16,
            cheb_order: 6,
            encoder_levels: 3,
            channels: vec![16, 32],
            ..Self::default()
        }
    }

    pub fn sampled_levels(&self) -> usize {
        self.encoder_levels.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigMismatch(m));
        if self.latent_size < 1 {
            return bad("latent_size must be at least 1".into());
        }
        if self.sampling_factor < 2 {
            return bad("sampling_factor must be at least 2".into());
        }
        if self.encoder_levels < 2 {
            return bad("encoder_levels must be at least 2".into());
        }
        if self.channels.len() != self.sampled_levels() || self.channels.contains(&0) {
            return bad(format!(
                "channels must list {} positive widths, got {:?}",
                self.sampled_levels(),
                self.channels
            ));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning rate must be positive and lr_decay in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight_decay be non-negative".into());
        }
        Ok(())
    }
}

/// Affine map between millimetre shapes and network units.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl Normalization {
    /// Mean shape and the RMS deviation from it over every coordinate.
    pub fn fit(shapes: &[Vec<f64>]) -> Result<Self> {
        let first = shapes.first().ok_or(Error::EmptyDataset)?;
        let len = first.len();
        let mut mean = vec![0.0; len];
        for s in shapes {
            if s.len() != len {
                return Err(Error::ShapeMismatch("shapes differ in length".into()));
            }
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        let count = shapes.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        let sq: f64 = shapes
            .iter()
            .flat_map(|s| s.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)))
            .sum();
        let scale = (sq / (count * len as f64)).sqrt();
        Ok(Self {
            mean,
            scale: if scale > 0.0 { scale } else { 1.0 },
        })
    }

    pub fn normalize(&self, shape: &[f64]) -> Vec<f64> {
        shape.iter().zip(&self.mean).map(|(v, m)| (v - m) / self.scale).collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).map(|(v, m)| v * self.scale + m).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AutoencoderModel {
    config: AutoencoderConfig,
    hierarchy: MeshHierarchy,
    normalization: Normalization,
    down: Vec<Arc<CsrMatrix>>,
    down_t: Vec<Arc<CsrMatrix>>,
    up: Vec<Arc<CsrMatrix>>,
    up_t: Vec<Arc<CsrMatrix>>,
    encoder_convs: Vec<ChebConv>,
    encoder_dense: Dense,
    decoder_dense: Dense,
    decoder_convs: Vec<ChebConv>,
    output_conv: ChebConv,
}

pub struct EncoderCache {
    batch: usize,
    levels: Vec<(ChebCache, Vec<f64>)>,
    dense: DenseCache,
    latent: Vec<f64>,
}

pub struct DecoderCache {
    batch: usize,
    dense: DenseCache,
    dense_out: Vec<f64>,
    levels: Vec<(ChebCache, Vec<f64>)>,
    output: ChebCache,
}

/// Builds the network with seeded random weights and identity normalization
/// around the template.
/// Scale of the output layer's initial weights relative to He-uniform. A
/// near-mean initial output avoids an early plateau at the mean shape seen
/// with some seeds when the random output starts large.
const OUTPUT_INIT_GAIN: f64 = 0.1;

pub fn build_model(config: &AutoencoderConfig, hierarchy: &MeshHierarchy) -> Result<AutoencoderModel> {
    config.validate()?;
    let s = config.sampled_levels();
    if hierarchy.depth() < s {
        return Err(Error::ConfigMismatch(format!(
            "{} down-sampling levels need a hierarchy of depth {s}, got {}",
            s,
            hierarchy.depth()
        )));
    }
    for pair in &hierarchy.pairs[..s] {
        if pair.coarse_count != pair.fine_count.div_ceil(config.sampling_factor) {
            return Err(Error::ConfigMismatch(format!(
                "hierarchy level {} -> {} does not match sampling factor {}",
                pair.fine_count, pair.coarse_count, config.sampling_factor
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lap = |level: usize| Arc::new(hierarchy.laplacians[level].scaled.clone());
    let k = config.cheb_order;
    let c = &config.channels;

    let mut encoder_convs = Vec::with_capacity(s);
    let mut width = 3;
    for level in 0..s {
        encoder_convs.push(ChebConv::new(lap(level), k, width, c[level], &mut rng));
        width = c[level];
    }
    let coarse = hierarchy.levels[s].vertex_count();
    let encoder_dense = Dense::new(coarse * width, config.latent_size, &mut rng);
    let decoder_dense = Dense::new(config.latent_size, coarse * width, &mut rng);
    let mut decoder_convs = Vec::with_capacity(s);
    for level in (0..s).rev() {
        let out = if level >= 1 { c[level - 1] } else { c[0] };
        decoder_convs.push(ChebConv::new(lap(level), k, width, out, &mut rng));
        width = out;
    }
    let mut output_conv = ChebConv::new(lap(0), k, width, 3, &mut rng);
    for w in output_conv.weight.values_mut() {
        *w *= OUTPUT_INIT_GAIN;
    }

    let pairs = &hierarchy.pairs[..s];
    Ok(AutoencoderModel {
        config: config.clone(),
        normalization: Normalization {
            mean: hierarchy.levels[0].flat_vertices(),
            scale: 1.0,
        },
        down: pairs.iter().map(|p| Arc::new(p.q_down.clone())).collect(),
        down_t: pairs.iter().map(|p| Arc::new(p.q_down.transpose())).collect(),
        up: pairs.iter().map(|p| Arc::new(p.q_up.clone())).collect(),
        up_t: pairs.iter().map(|p| Arc::new(p.q_up.transpose())).collect(),
        hierarchy: hierarchy.clone(),
        encoder_convs,
        encoder_dense,
        decoder_dense,
        decoder_convs,
        output_conv,
    })
}

impl AutoencoderModel {
    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &MeshHierarchy {
        &self.hierarchy
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn set_normalization(&mut self, normalization: Normalization) -> Result<()> {
        if normalization.mean.len() != self.vertex_count() * 3 || !(normalization.scale > 0.0) {
            return Err(Error::ShapeMismatch("normalization does not fit the template".into()));
        }
        self.normalization = normalization;
        Ok(())
    }

    pub fn latent_size(&self) -> usize {
        self.config.latent_size
    }

    /// Vertices of the finest level.
    pub fn vertex_count(&self) -> usize {
        self.hierarchy.levels[0].vertex_count()
    }

    /// Normalized `[B, N, 3]` input to `[B, latent]`.
    pub fn encode_batch(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, EncoderCache)> {
        let mut h = x.to_vec();
        let mut levels = Vec::with_capacity(self.encoder_convs.len());
        for (conv, down) in self.encoder_convs.iter().zip(&self.down) {
            let (y, cache) = conv.forward(&h, batch)?;
            let y = relu_forward(&y);
            h = down.mul_batched(&y, batch, conv.out_channels())?;
            levels.push((cache, y));
        }
        let (z, dense) = self.encoder_dense.forward(&h, batch)?;
        let z = if self.config.latent_relu { relu_forward(&z) } else { z };
        Ok((
            z.clone(),
            EncoderCache {
                batch,
                levels,
                dense,
                latent: z,
            },
        ))
    }

    /// `[B, latent]` to normalized `[B, N, 3]`.
    pub fn decode_batch(&self, z: &[f64], batch: usize) -> Result<(Vec<f64>, DecoderCache)> {
        let (h, dense) = self.decoder_dense.forward(z, batch)?;
        let dense_out = relu_forward(&h);
        let mut h = dense_out.clone();
        let mut width = self.encoder_dense.in_features() / self.hierarchy.levels[self.down.len()].vertex_count();
        let mut levels = Vec::with_capacity(self.decoder_convs.len());
        for (conv, up) in self.decoder_convs.iter().zip(self.up.iter().rev()) {
            let u = up.mul_batched(&h, batch, width)?;
            let (y, cache) = conv.forward(&u, batch)?;
            let y = relu_forward(&y);
            width = conv.out_channels();
            h = y.clone();
            levels.push((cache, y));
        }
        let (out, output) = self.output_conv.forward(&h, batch)?;
        Ok((
            out,
            DecoderCache {
                batch,
                dense,
                dense_out,
                levels,
                output,
            },
        ))
    }

    /// Accumulates decoder gradients and returns the latent gradient.
    pub fn backward_decoder(&mut self, cache: &DecoderCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        let batch = cache.batch;
        let mut g = self.output_conv.backward(&cache.output, grad_out)?;
        let depth = self.decoder_convs.len();
        for i in (0..depth).rev() {
            let (conv_cache, y) = &cache.levels[i];
            g = relu_backward(y, &g)?;
            let conv = &mut self.decoder_convs[i];
            g = conv.backward(conv_cache, &g)?;
            // this conv ran on level depth - 1 - i, right after up-sampling
            let up_t = &self.up_t[depth - 1 - i];
            g = up_t.mul_batched(&g, batch, conv.in_channels())?;
        }
        g = relu_backward(&cache.dense_out, &g)?;
        self.decoder_dense.backward(&cache.dense, &g)
    }

    /// Accumulates encoder gradients and returns the input gradient.
    pub fn backward_encoder(&mut self, cache: &EncoderCache, grad_latent: &[f64]) -> Result<Vec<f64>> {
        let batch = cache.batch;
        let mut g = if self.config.latent_relu {
            relu_backward(&cache.latent, grad_latent)?
        } else {
            grad_latent.to_vec()
        };
        g = self.encoder_dense.backward(&cache.dense, &g)?;
        for level in (0..self.encoder_convs.len()).rev() {
            let conv = &mut self.encoder_convs[level];
            let (conv_cache, y) = &cache.levels[level];
            g = self.down_t[level].mul_batched(&g, batch, conv.out_channels())?;
            g = relu_backward(y, &g)?;
            g = conv.backward(conv_cache, &g)?;
        }
        Ok(g)
    }

    fn check_shape(&self, shape: &[f64]) -> Result<()> {
        if shape.len() != self.vertex_count() * 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} vertices, got {} coordinates",
                self.vertex_count(),
                shape.len()
            )));
        }
        Ok(())
    }

    /// Latent code of a shape given in millimetres.
    pub fn encode3d(&self, vertices: &[f64]) -> Result<Vec<f64>> {
        self.check_shape(vertices)?;
        Ok(self.encode_batch(&self.normalization.normalize(vertices), 1)?.0)
    }

    /// Shape in millimetres decoded from a latent code.
    pub fn decode(&self, latent: &[f64]) -> Result<Vec<f64>> {
        if latent.len() != self.latent_size() {
            return Err(Error::ShapeMismatch(format!(
                "latent has {} entries, model expects {}",
                latent.len(),
                self.latent_size()
            )));
        }
        let (out, _) = self.decode_batch(latent, 1)?;
        Ok(self.normalization.denormalize(&out))
    }

    /// Latent codes of many shapes, computed in chunks.
    pub fn encode_many(&self, shapes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(shapes.len());
        for chunk in shapes.chunks(INFERENCE_CHUNK) {
            let mut x = Vec::with_capacity(chunk.len() * self.vertex_count() * 3);
            for s in chunk {
                self.check_shape(s)?;
                x.extend(self.normalization.normalize(s));
            }
            let (z, _) = self.encode_batch(&x, chunk.len())?;
            out.extend(z.chunks_exact(self.latent_size()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn decode_many(&self, latents: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n3 = self.vertex_count() * 3;
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(INFERENCE_CHUNK) {
            let z: Vec<f64> = chunk.iter().flatten().copied().collect();
            if z.len() != chunk.len() * self.latent_size() {
                return Err(Error::ShapeMismatch("latent codes differ in length".into()));
            }
            let (y, _) = self.decode_batch(&z, chunk.len())?;
            out.extend(y.chunks_exact(n3).map(|s| self.normalization.denormalize(s)));
        }
        Ok(out)
    }

    /// `decode(encode3d(x))` for every shape.
    pub fn reconstruct_many(&self, shapes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.decode_many(&self.encode_many(shapes)?)
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint, prefix: &str) -> Result<()> {
        ckpt.set_meta(&format!("{prefix}.config"), &self.config)?;
        ckpt.push(
            format!("{prefix}.normalization.mean"),
            vec![self.vertex_count(), 3],
            self.normalization.mean.clone(),
        )?;
        ckpt.push(format!("{prefix}.normalization.scale"), vec![1], vec![self.normalization.scale])?;
        write_params(self, ckpt, &format!("{prefix}.param"))
    }

    /// Restores a model written by [`write_checkpoint`](Self::write_checkpoint)
    /// over the given hierarchy.
    pub fn read_checkpoint(ckpt: &Checkpoint, prefix: &str, hierarchy: &MeshHierarchy) -> Result<Self> {
        let config: AutoencoderConfig = ckpt.meta(&format!("{prefix}.config"))?;
        let mut model = build_model(&config, hierarchy)?;
        let n = model.vertex_count();
        let mean = ckpt.values(&format!("{prefix}.normalization.mean"), &[n, 3])?.to_vec();
        let scale = ckpt.values(&format!("{prefix}.normalization.scale"), &[1])?[0];
        model.set_normalization(Normalization { mean, scale })?;
        read_params(&mut model, ckpt, &format!("{prefix}.param"))?;
        Ok(model)
    }

    /// Standalone checkpoint holding the hierarchy and the model.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(AUTOENCODER_KIND);
        c.push_hierarchy("hierarchy", &self.hierarchy)?;
        self.write_checkpoint(&mut c, "model")?;
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(AUTOENCODER_KIND)?;
        let hierarchy = ckpt.hierarchy("hierarchy")?;
        Self::read_checkpoint(ckpt, "model", &hierarchy)
    }
}

pub const AUTOENCODER_KIND: &str = "mesh_autoencoder";
const INFERENCE_CHUNK: usize = 32;

impl Parameters for AutoencoderModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, c) in self.encoder_convs.iter().enumerate() {
            f(&format!("encoder.conv{i}.weight"), &c.weight);
            f(&format!("encoder.conv{i}.bias"), &c.bias);
        }
        f("encoder.dense.weight", &self.encoder_dense.weight);
        f("encoder.dense.bias", &self.encoder_dense.bias);
        f("decoder.dense.weight", &self.decoder_dense.weight);
        f("decoder.dense.bias", &self.decoder_dense.bias);
        for (i, c) in self.decoder_convs.iter().enumerate() {
            f(&format!("decoder.conv{i}.weight"), &c.weight);
            f(&format!("decoder.conv{i}.bias"), &c.bias);
        }
        f("decoder.output.weight", &self.output_conv.weight);
        f("decoder.output.bias", &self.output_conv.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, c) in self.encoder_convs.iter_mut().enumerate() {
            f(&format!("encoder.conv{i}.weight"), &mut c.weight);
            f(&format!("encoder.conv{i}.bias"), &mut c.bias);
        }
        f("encoder.dense.weight", &mut self.encoder_dense.weight);
        f("encoder.dense.bias", &mut self.encoder_dense.bias);
        f("decoder.dense.weight", &mut self.decoder_dense.weight);
        f("decoder.dense.bias", &mut self.decoder_dense.bias);
        for (i, c) in self.decoder_convs.iter_mut().enumerate() {
            f(&format!("decoder.conv{i}.weight"), &mut c.weight);
            f(&format!("decoder.conv{i}.bias"), &mut c.bias);
        }
        f("decoder.output.weight", &mut self.output_conv.weight);
        f("decoder.output.bias", &mut self.output_conv.bias);
    }
}

/// Stores every parameter of `model` as `prefix.name`.
pub fn write_params<M: Parameters + ?Sized>(model: &M, ckpt: &mut Checkpoint, prefix: &str) -> Result<()> {
    let mut result = Ok(());
    model.visit_params(&mut |name, t| {
        if result.is_ok() {
            result = ckpt.push(format!("{prefix}.{name}"), t.shape().to_vec(), t.values().to_vec());
        }
    });
    result
}

/// Overwrites every parameter of `model` from `prefix.name`, checking shapes.
pub fn read_params<M: Parameters + ?Sized>(model: &mut M, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
    let mut result = Ok(());
    model.visit_params_mut(&mut |name, t| {
        if result.is_ok() {
            result = ckpt
                .values(&format!("{prefix}.{name}"), t.shape())
                .and_then(|v| t.assign(v));
        }
    });
    result
}

/// Mean over vertices of the Euclidean distance between corresponding
/// vertices, in the units of the input.
pub fn mean_euclidean_error(prediction: &[f64], truth: &[f64]) -> Result<f64> {
    if prediction.len() != truth.len() || !prediction.len().is_multiple_of(3) || prediction.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "MEE needs equal non-empty N x 3 shapes, got {} and {} values",
            prediction.len(),
            truth.len()
        )));
    }
    let total: f64 = prediction
        .chunks_exact(3)
        .zip(truth.chunks_exact(3))
        .map(|(p, t)| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)).sqrt())
        .sum();
    Ok(total / (prediction.len() / 3) as f64)
}

/// Per-sample MEE of predictions against ground truth.
pub fn per_sample_mee(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<Vec<f64>> {
    if predictions.len() != truths.len() {
        return Err(Error::ShapeMismatch("prediction and truth counts differ".into()));
    }
    predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| mean_euclidean_error(p, t))
        .collect()
}

/// MEE of always predicting `mean_shape`, averaged over `shapes`.
pub fn mean_shape_baseline(mean_shape: &[f64], shapes: &[Vec<f64>]) -> Result<f64> {
    if shapes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total = shapes
        .iter()
        .map(|s| mean_euclidean_error(mean_shape, s))
        .sum::<Result<f64>>()?;
    Ok(total / shapes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mee_basics() {
        let a = vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0];
        assert_eq!(mean_euclidean_error(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| if i % 3 == 2 { v + 1.0 } else { *v }).collect();
        assert_eq!(mean_euclidean_error(&a, &b).unwrap(), 1.0);
        assert!(mean_euclidean_error(&a, &a[..3]).is_err());
    }

    #[test]
    fn normalization_round_trip() {
        let shapes = vec![vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]];
        let n = Normalization::fit(&shapes).unwrap();
        assert_eq!(n.mean, vec![2.0, 2.0, 2.0]);
        let x = n.normalize(&shapes[0]);
        let back = n.denormalize(&x);
        for (a, b) in back.iter().zip(&shapes[0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let single = Normalization::fit(&shapes[..1]).unwrap();
        assert_eq!(single.scale, 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(AutoencoderConfig::default().validate().is_ok());
        assert!(AutoencoderConfig::toy().validate().is_ok());
        let mut c = AutoencoderConfig::toy();
        c.channels = vec![16];
        assert!(c.validate().is_err());
        let mut c = AutoencoderConfig::toy();
        c.latent_size = 0;
        assert!(c.validate().is_err());
        let mut c = AutoencoderConfig::toy();
        c.sampling_factor = 1;
        assert!(c.validate().is_err());
    }
}
