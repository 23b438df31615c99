use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Encoder2DConfig, ImageEncoder};
use crate::autoencoder::{per_sample_mee, AutoencoderModel, EpochRecord, TrainHistory};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{l1_loss, lr_schedule, Parameters, SgdConfig, SgdState};
use crate::synth::GrayImage;
use crate::util::mix_seed;

/// An image with its regression target: a latent code for training pairs, a
/// vertex array for validation pairs.
#[derive(Debug, Clone, Copy)]
pub struct ImagePair<'a> {
    pub image: &'a GrayImage,
    pub target: &'a [f64],
}

/// Epoch-by-epoch stage-2 training. Only the image encoder is updated; the
/// autoencoder is borrowed immutably and used to decode validation latents,
/// so it cannot change. Seeding follows the stage-1 trainer, so restored runs
/// continue bit-identically.
#[derive(Debug, Clone)]
pub struct Stage2Trainer {
    model: ImageEncoder,
    best: ImageEncoder,
    optimizer: SgdState,
    history: TrainHistory,
    record_time: bool,
}

pub const STAGE2_STATE_KIND: &str = "image_encoder_training_state";

impl Stage2Trainer {
    pub fn new(config: &Encoder2DConfig, decoder: &AutoencoderModel) -> Result<Self> {
        if config.latent_size != decoder.latent_size() {
            return Err(Error::ConfigMismatch(format!(
                "image encoder latent {} vs autoencoder latent {}",
                config.latent_size,
                decoder.latent_size()
            )));
        }
        let model = ImageEncoder::new(config)?;
        Ok(Self {
            best: model.clone(),
            optimizer: SgdState::new(sgd_config(config)),
            model,
            history: TrainHistory::default(),
            record_time: true,
        })
    }

    pub fn without_timing(mut self) -> Self {
        self.record_time = false;
        self
    }

    pub fn model(&self) -> &ImageEncoder {
        &self.model
    }

    pub fn best(&self) -> &ImageEncoder {
        &self.best
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.epochs.len()
    }

    pub fn into_best(self) -> (ImageEncoder, TrainHistory) {
        (self.best, self.history)
    }

    /// One pass over `train` (image, latent) pairs, then the 2D-to-3D MEE on
    /// `val` (image, vertices) pairs through `decoder`.
    pub fn run_epoch(&mut self, train: &[ImagePair], val: &[ImagePair], decoder: &AutoencoderModel) -> Result<&EpochRecord> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let start = Instant::now();
        let epoch = self.epochs_done();
        let config = self.model.config().clone();
        let lr = lr_schedule(epoch, config.learning_rate, config.lr_decay);
        self.optimizer.config.learning_rate = lr;
        let latent = config.latent_size;
        if train.iter().any(|p| p.target.len() != latent) {
            return Err(Error::ShapeMismatch(format!("training targets must have {latent} values")));
        }
        let n3 = decoder.vertex_count() * 3;
        if val.iter().any(|p| p.target.len() != n3) {
            return Err(Error::ShapeMismatch(format!("validation targets must have {n3} values")));
        }

        let epoch_seed = mix_seed(config.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        for (k, chunk) in order.chunks(config.batch_size).enumerate() {
            let images: Vec<&GrayImage> = chunk.iter().map(|&i| train[i].image).collect();
            let x = self.model.batch_images(&images)?;
            let target: Vec<f64> = chunk.iter().flat_map(|&i| train[i].target.iter().copied()).collect();
            let loss = self.step(&x, &target, chunk.len(), mix_seed(epoch_seed, k as u64))?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let images: Vec<&GrayImage> = val.iter().map(|p| p.image).collect();
        let latents = self.model.encode_images(&images)?;
        let predictions = decoder.decode_many(&latents)?;
        let truths: Vec<Vec<f64>> = val.iter().map(|p| p.target.to_vec()).collect();
        let mees = per_sample_mee(&predictions, &truths)?;
        let val_mee = mees.iter().sum::<f64>() / mees.len() as f64;
        if !val_mee.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        if self.history.best_val_mee().is_none_or(|best| val_mee < best) {
            self.best = self.model.clone();
            self.history.best_epoch = Some(epoch);
        }
        self.history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_mee,
            learning_rate: lr,
            wall_time: self.record_time.then(|| start.elapsed().as_secs_f64()),
        });
        Ok(self.history.epochs.last().expect("just pushed"))
    }

    /// One SGD step on a pixel batch with dropout masks from `seed`; returns
    /// the L1 latent loss before the step.
    pub fn step(&mut self, x: &[f64], target: &[f64], batch: usize, seed: u64) -> Result<f64> {
        self.model.zero_grad();
        let (z, cache) = self.model.forward(x, batch, true, seed)?;
        let (loss, grad) = l1_loss(&z, target)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        self.model.backward(&cache, &grad)?;
        self.optimizer.step(&mut self.model)?;
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(STAGE2_STATE_KIND);
        self.model.write_checkpoint(&mut c, "model")?;
        self.best.write_checkpoint(&mut c, "best")?;
        for (i, v) in self.optimizer.velocity.iter().enumerate() {
            c.push(format!("velocity.{i}"), vec![v.len()], v.clone())?;
        }
        c.set_meta("velocity_count", &self.optimizer.velocity.len())?;
        c.set_meta("history", &self.history)?;
        c.set_meta("record_time", &self.record_time)?;
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(STAGE2_STATE_KIND)?;
        let model = ImageEncoder::read_checkpoint(ckpt, "model")?;
        let best = ImageEncoder::read_checkpoint(ckpt, "best")?;
        let count: usize = ckpt.meta("velocity_count")?;
        let velocity = (0..count)
            .map(|i| Ok(ckpt.get(&format!("velocity.{i}"))?.data.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            optimizer: SgdState {
                config: sgd_config(model.config()),
                velocity,
            },
            history: ckpt.meta("history")?,
            record_time: ckpt.meta("record_time")?,
            model,
            best,
        })
    }
}

fn sgd_config(config: &Encoder2DConfig) -> SgdConfig {
    SgdConfig {
        learning_rate: config.learning_rate,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    }
}

/// Trains for `config.epochs` epochs and returns the encoder with the lowest
/// 2D-to-3D validation MEE.
pub fn train_stage2(
    train: &[ImagePair],
    val: &[ImagePair],
    config: &Encoder2DConfig,
    decoder: &AutoencoderModel,
) -> Result<(ImageEncoder, TrainHistory)> {
    let mut trainer = Stage2Trainer::new(config, decoder)?;
    for _ in 0..config.epochs {
        trainer.run_epoch(train, val, decoder)?;
    }
    Ok(trainer.into_best())
}
