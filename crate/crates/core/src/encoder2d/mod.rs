//! Image encoder that regresses the latent code of a trained mesh
//! autoencoder from a grayscale render.
//!
//! A strided convolutional backbone produces a global feature vector (the
//! spatial mean of its last block) and exports the feature maps of selected
//! intermediate blocks. Each exported map goes through a 1x1 convolution that
//! reduces its channels, is flattened and passed to a dense layer; the global
//! vector gets its own dense layer. The branch outputs are concatenated and a
//! final dense layer maps them to the latent code. Dropout precedes every
//! dense layer during training and ReLU follows each of them except the last,
//! which matches the sign convention of the autoencoder's latent.
//!
//! Pixel intensities are mapped from `[0, 1]` to `[-1, 1]` on input.
//!
//! Nothing is pretrained: the backbone is trained jointly with the fusion
//! head against latents produced by the frozen mesh encoder.

mod conv;
mod train;

pub use conv::{global_average_pool, global_average_pool_backward, Conv2d, Conv2dCache};
pub use train::{train_stage2, ImagePair, Stage2Trainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{read_params, write_params, AutoencoderModel};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{
    dropout_backward, dropout_forward, relu_backward, relu_forward, Dense, DenseCache, DropoutMask, Parameters,
    Tensor,
};
use crate::synth::GrayImage;
use crate::util::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Encoder2DConfig {
    /// Side of the square input image in pixels.
    pub image_size: usize,
    /// Output channels of each 3x3 backbone block.
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    /// Zero-based indices of the blocks whose feature maps feed the head.
    pub taps: Vec<usize>,
    /// Channels kept by each tap's 1x1 reduction.
    pub tap_channels: usize,
    /// Output width of each tap's dense layer.
    pub tap_features: usize,
    /// Output width of the dense layer on the global vector.
    pub global_features: usize,
    pub latent_size: usize,
    /// ReLU on the predicted latent; must agree with the autoencoder.
    pub latent_relu: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for Encoder2DConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            widths: vec![16, 32, 64, 128],
            strides: vec![2, 2, 2, 2],
            taps: vec![0, 1],
            tap_channels: 4,
            tap_features: 64,
            global_features: 128,
            latent_size: 64,
            latent_relu: false,
            epochs: 300,
            batch_size: 16,
            learning_rate: 0.01,
            lr_decay: 0.98,
            momentum: 0.9,
            weight_decay: 0.0,
            dropout: 0.25,
            seed: 0,
        }
    }
}

impl Encoder2DConfig {
    /// Default head sized for the toy autoencoder's 16-dimensional latent.
    pub fn toy() -> Self {
        Self {
            latent_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigMismatch(m));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("backbone needs at least one block of positive width".into());
        }
        if self.strides.len() != self.widths.len() || self.strides.contains(&0) {
            return bad("strides must list one positive stride per block".into());
        }
        let total: usize = self.strides.iter().product();
        if self.image_size == 0 || !self.image_size.is_multiple_of(total) {
            return bad(format!(
                "image_size {} is not divisible by the total stride {total}",
                self.image_size
            ));
        }
        if let Some(t) = self.taps.iter().find(|&&t| t >= self.widths.len()) {
            return bad(format!("tap {t} is past the last block"));
        }
        let mut sorted = self.taps.clone();
        sorted.dedup();
        if sorted.len() != self.taps.len() {
            return bad("taps must not repeat".into());
        }
        if self.tap_channels == 0 || self.tap_features == 0 || self.global_features == 0 || self.latent_size == 0 {
            return bad("head widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidProbability(self.dropout));
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

    /// Spatial side after each block.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut side = self.image_size;
        self.strides
            .iter()
            .map(|s| {
                // 3x3 kernel, padding 1
                side = (side - 1) / s + 1;
                side
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ImageEncoder {
    config: Encoder2DConfig,
    blocks: Vec<Conv2d>,
    reducers: Vec<Conv2d>,
    tap_dense: Vec<Dense>,
    global_dense: Dense,
    fusion_dense: Dense,
}

/// Intermediate values of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ImageEncoderCache {
    batch: usize,
    block_caches: Vec<Conv2dCache>,
    block_outputs: Vec<Vec<f64>>,
    reducer_caches: Vec<Conv2dCache>,
    tap_masks: Vec<DropoutMask>,
    tap_caches: Vec<DenseCache>,
    tap_outputs: Vec<Vec<f64>>,
    global_mask: DropoutMask,
    global_cache: DenseCache,
    global_output: Vec<f64>,
    fusion_mask: DropoutMask,
    fusion_cache: DenseCache,
    latent: Vec<f64>,
}

pub const IMAGE_ENCODER_KIND: &str = "image_encoder";
const INFERENCE_CHUNK: usize = 32;

impl ImageEncoder {
    pub fn new(config: &Encoder2DConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut blocks = Vec::with_capacity(config.widths.len());
        let mut in_channels = 1;
        for (&w, &s) in config.widths.iter().zip(&config.strides) {
            blocks.push(Conv2d::new(in_channels, w, 3, s, 1, &mut rng));
            in_channels = w;
        }
        let sizes = config.block_sizes();
        let mut reducers = Vec::new();
        let mut tap_dense = Vec::new();
        for &t in &config.taps {
            reducers.push(Conv2d::new(config.widths[t], config.tap_channels, 1, 1, 0, &mut rng));
            let flat = sizes[t] * sizes[t] * config.tap_channels;
            tap_dense.push(Dense::new(flat, config.tap_features, &mut rng));
        }
        let global_dense = Dense::new(in_channels, config.global_features, &mut rng);
        let fused = config.global_features + config.taps.len() * config.tap_features;
        let fusion_dense = Dense::new(fused, config.latent_size, &mut rng);
        Ok(Self {
            config: config.clone(),
            blocks,
            reducers,
            tap_dense,
            global_dense,
            fusion_dense,
        })
    }

    pub fn config(&self) -> &Encoder2DConfig {
        &self.config
    }

    pub fn latent_size(&self) -> usize {
        self.config.latent_size
    }

    fn image_pixels(&self) -> usize {
        self.config.image_size * self.config.image_size
    }

    /// Stacks images into a `[B, H, W, 1]` batch, checking their size.
    /// Intensities in `[0, 1]` are mapped to `[-1, 1]`.
    pub fn batch_images(&self, images: &[&GrayImage]) -> Result<Vec<f64>> {
        let side = self.config.image_size;
        let mut x = Vec::with_capacity(images.len() * self.image_pixels());
        for img in images {
            if img.width != side || img.height != side {
                return Err(Error::ShapeMismatch(format!(
                    "{}x{} image for a {side}x{side} encoder",
                    img.width, img.height
                )));
            }
            x.extend(img.pixels.iter().map(|p| 2.0 * p - 1.0));
        }
        Ok(x)
    }

    /// `[B, H, W, 1]` pixels to `[B, latent]`. Dropout is applied only when
    /// `training`, with masks derived from `seed`.
    pub fn forward(&self, x: &[f64], batch: usize, training: bool, seed: u64) -> Result<(Vec<f64>, ImageEncoderCache)> {
        if x.len() != batch * self.image_pixels() {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a batch of {batch} {s}x{s} images",
                x.len(),
                s = self.config.image_size
            )));
        }
        let p = self.config.dropout;
        let sizes = self.config.block_sizes();
        let mut side = self.config.image_size;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut block_outputs: Vec<Vec<f64>> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let input = block_outputs.last().map_or(x, |v| v.as_slice());
            let (pre, cache) = block.forward(input, batch, side, side)?;
            block_caches.push(cache);
            block_outputs.push(relu_forward(&pre));
            side = block.output_size(side, side)?.0;
        }

        let last = self.blocks.last().expect("validated non-empty");
        let pooled = global_average_pool(
            block_outputs.last().expect("non-empty"),
            batch,
            side * side,
            last.out_channels(),
        );
        let (dropped, global_mask) = dropout_forward(&pooled, p, mix_seed(seed, 0), training)?;
        let (g, global_cache) = self.global_dense.forward(&dropped, batch)?;
        let global_output = relu_forward(&g);

        let mut reducer_caches = Vec::new();
        let mut tap_masks = Vec::new();
        let mut tap_caches = Vec::new();
        let mut tap_outputs = Vec::new();
        for (j, &t) in self.config.taps.iter().enumerate() {
            let (r, rc) = self.reducers[j].forward(&block_outputs[t], batch, sizes[t], sizes[t])?;
            let (dropped, mask) = dropout_forward(&r, p, mix_seed(seed, 1 + j as u64), training)?;
            let (y, dc) = self.tap_dense[j].forward(&dropped, batch)?;
            reducer_caches.push(rc);
            tap_masks.push(mask);
            tap_caches.push(dc);
            tap_outputs.push(relu_forward(&y));
        }

        let fused = self.concat(&global_output, &tap_outputs, batch);
        let (dropped, fusion_mask) = dropout_forward(&fused, p, mix_seed(seed, u64::MAX), training)?;
        let (z, fusion_cache) = self.fusion_dense.forward(&dropped, batch)?;
        let latent = if self.config.latent_relu { relu_forward(&z) } else { z };
        Ok((
            latent.clone(),
            ImageEncoderCache {
                batch,
                block_caches,
                block_outputs,
                reducer_caches,
                tap_masks,
                tap_caches,
                tap_outputs,
                global_mask,
                global_cache,
                global_output,
                fusion_mask,
                fusion_cache,
                latent,
            },
        ))
    }

    fn concat(&self, global: &[f64], taps: &[Vec<f64>], batch: usize) -> Vec<f64> {
        let gf = self.config.global_features;
        let tf = self.config.tap_features;
        let mut out = Vec::with_capacity(batch * (gf + taps.len() * tf));
        for b in 0..batch {
            out.extend_from_slice(&global[b * gf..(b + 1) * gf]);
            for t in taps {
                out.extend_from_slice(&t[b * tf..(b + 1) * tf]);
            }
        }
        out
    }

    /// Accumulates parameter gradients; returns the gradient with respect to
    /// the input pixels.
    pub fn backward(&mut self, cache: &ImageEncoderCache, grad_latent: &[f64]) -> Result<Vec<f64>> {
        let batch = cache.batch;
        let grad_z = if self.config.latent_relu {
            relu_backward(&cache.latent, grad_latent)?
        } else {
            if grad_latent.len() != cache.latent.len() {
                return Err(Error::ShapeMismatch("latent gradient".into()));
            }
            grad_latent.to_vec()
        };
        let g = self.fusion_dense.backward(&cache.fusion_cache, &grad_z)?;
        let g = dropout_backward(&cache.fusion_mask, &g)?;

        // split the fused gradient back into its branches
        let gf = self.config.global_features;
        let tf = self.config.tap_features;
        let width = gf + self.config.taps.len() * tf;
        let mut grad_global = Vec::with_capacity(batch * gf);
        let mut grad_taps = vec![Vec::with_capacity(batch * tf); self.config.taps.len()];
        for row in g.chunks_exact(width) {
            grad_global.extend_from_slice(&row[..gf]);
            for (j, gt) in grad_taps.iter_mut().enumerate() {
                gt.extend_from_slice(&row[gf + j * tf..gf + (j + 1) * tf]);
            }
        }

        let mut grad_blocks: Vec<Vec<f64>> = cache.block_outputs.iter().map(|o| vec![0.0; o.len()]).collect();
        let gg = relu_backward(&cache.global_output, &grad_global)?;
        let gg = self.global_dense.backward(&cache.global_cache, &gg)?;
        let gg = dropout_backward(&cache.global_mask, &gg)?;
        let last = self.blocks.last().expect("non-empty");
        let positions = cache.block_outputs.last().expect("non-empty").len() / (batch * last.out_channels());
        let pooled = global_average_pool_backward(&gg, batch, positions, last.out_channels());
        add_into(grad_blocks.last_mut().expect("non-empty"), &pooled);

        for (j, &t) in self.config.taps.iter().enumerate() {
            let gt = relu_backward(&cache.tap_outputs[j], &grad_taps[j])?;
            let gt = self.tap_dense[j].backward(&cache.tap_caches[j], &gt)?;
            let gt = dropout_backward(&cache.tap_masks[j], &gt)?;
            let gt = self.reducers[j].backward(&cache.reducer_caches[j], &gt)?;
            add_into(&mut grad_blocks[t], &gt);
        }

        let mut grad_x = Vec::new();
        for i in (0..self.blocks.len()).rev() {
            let gpre = relu_backward(&cache.block_outputs[i], &grad_blocks[i])?;
            let gin = self.blocks[i].backward(&cache.block_caches[i], &gpre)?;
            if i > 0 {
                add_into(&mut grad_blocks[i - 1], &gin);
            } else {
                grad_x = gin;
            }
        }
        Ok(grad_x)
    }

    /// Latent code of one image, without dropout.
    pub fn encode2d(&self, image: &GrayImage) -> Result<Vec<f64>> {
        let x = self.batch_images(&[image])?;
        Ok(self.forward(&x, 1, false, 0)?.0)
    }

    pub fn encode_images(&self, images: &[&GrayImage]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_CHUNK) {
            let x = self.batch_images(chunk)?;
            let (z, _) = self.forward(&x, chunk.len(), false, 0)?;
            out.extend(z.chunks_exact(self.latent_size()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn write_checkpoint(&self, ckpt: &mut Checkpoint, prefix: &str) -> Result<()> {
        ckpt.set_meta(&format!("{prefix}.config"), &self.config)?;
        write_params(self, ckpt, &format!("{prefix}.param"))
    }

    pub fn read_checkpoint(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let config: Encoder2DConfig = ckpt.meta(&format!("{prefix}.config"))?;
        let mut model = Self::new(&config)?;
        read_params(&mut model, ckpt, &format!("{prefix}.param"))?;
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(IMAGE_ENCODER_KIND);
        self.write_checkpoint(&mut c, "model")?;
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(IMAGE_ENCODER_KIND)?;
        Self::read_checkpoint(ckpt, "model")
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

impl Parameters for ImageEncoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            f(&format!("backbone.block{i}.weight"), &b.weight);
            f(&format!("backbone.block{i}.bias"), &b.bias);
        }
        for (j, (r, d)) in self.reducers.iter().zip(&self.tap_dense).enumerate() {
            f(&format!("tap{j}.reduce.weight"), &r.weight);
            f(&format!("tap{j}.reduce.bias"), &r.bias);
            f(&format!("tap{j}.dense.weight"), &d.weight);
            f(&format!("tap{j}.dense.bias"), &d.bias);
        }
        f("global.dense.weight", &self.global_dense.weight);
        f("global.dense.bias", &self.global_dense.bias);
        f("fusion.dense.weight", &self.fusion_dense.weight);
        f("fusion.dense.bias", &self.fusion_dense.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("backbone.block{i}.weight"), &mut b.weight);
            f(&format!("backbone.block{i}.bias"), &mut b.bias);
        }
        for (j, (r, d)) in self.reducers.iter_mut().zip(self.tap_dense.iter_mut()).enumerate() {
            f(&format!("tap{j}.reduce.weight"), &mut r.weight);
            f(&format!("tap{j}.reduce.bias"), &mut r.bias);
            f(&format!("tap{j}.dense.weight"), &mut d.weight);
            f(&format!("tap{j}.dense.bias"), &mut d.bias);
        }
        f("global.dense.weight", &mut self.global_dense.weight);
        f("global.dense.bias", &mut self.global_dense.bias);
        f("fusion.dense.weight", &mut self.fusion_dense.weight);
        f("fusion.dense.bias", &mut self.fusion_dense.bias);
    }
}

/// `decode(encode2d(image))` in millimetres.
pub fn reconstruct_from_image(encoder: &ImageEncoder, decoder: &AutoencoderModel, image: &GrayImage) -> Result<Vec<f64>> {
    if encoder.latent_size() != decoder.latent_size() {
        return Err(Error::ConfigMismatch(format!(
            "image encoder latent {} vs autoencoder latent {}",
            encoder.latent_size(),
            decoder.latent_size()
        )));
    }
    decoder.decode(&encoder.encode2d(image)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Encoder2DConfig {
        Encoder2DConfig {
            image_size: 16,
            widths: vec![4, 6, 8],
            strides: vec![2, 2, 2],
            taps: vec![0, 1],
            tap_channels: 2,
            tap_features: 5,
            global_features: 7,
            latent_size: 3,
            ..Encoder2DConfig::default()
        }
    }

    #[test]
    fn block_sizes_halve() {
        assert_eq!(Encoder2DConfig::default().block_sizes(), vec![32, 16, 8, 4]);
    }

    #[test]
    fn validation() {
        let mut c = small();
        c.taps = vec![3];
        assert!(c.validate().is_err());
        let mut c = small();
        c.image_size = 12;
        assert!(c.validate().is_err());
        let mut c = small();
        c.dropout = 1.0;
        assert!(matches!(c.validate(), Err(Error::InvalidProbability(_))));
        assert!(small().validate().is_ok());
    }

    #[test]
    fn inference_is_deterministic() {
        let m = ImageEncoder::new(&small()).unwrap();
        let img = GrayImage::from_pixels(16, 16, (0..256).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let a = m.encode2d(&img).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, m.encode2d(&img).unwrap());
        let x = m.batch_images(&[&img]).unwrap();
        let (t1, _) = m.forward(&x, 1, true, 1).unwrap();
        let (t2, _) = m.forward(&x, 1, true, 1).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn wrong_image_size() {
        let m = ImageEncoder::new(&small()).unwrap();
        assert!(matches!(
            m.encode2d(&GrayImage::new(8, 8)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ImageEncoder::new(&small()).unwrap();
        let bytes = m.to_checkpoint().unwrap().to_bytes().unwrap();
        let back = ImageEncoder::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        let img = GrayImage::from_pixels(16, 16, vec![0.3; 256]).unwrap();
        assert_eq!(m.encode2d(&img).unwrap(), back.encode2d(&img).unwrap());
    }
}
