use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_model, per_sample_mee, AutoencoderConfig, AutoencoderModel, Normalization};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{l1_loss_grouped, lr_schedule, Parameters, SgdConfig, SgdState};
use crate::sampling::MeshHierarchy;
use crate::util::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mee: f64,
    pub learning_rate: f64,
    /// Seconds spent on the epoch; omitted in deterministic runs.
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best_val_mee(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.epochs[e].val_mee)
    }
}

/// Epoch-by-epoch stage-1 training with best-validation model selection.
///
/// Every random choice of epoch `e` comes from a generator seeded with
/// `(config.seed, e)`, so a trainer restored from a checkpoint continues
/// exactly as an uninterrupted run would.
#[derive(Debug, Clone)]
pub struct Stage1Trainer {
    model: AutoencoderModel,
    best: AutoencoderModel,
    optimizer: SgdState,
    history: TrainHistory,
    record_time: bool,
}

pub const STAGE1_STATE_KIND: &str = "autoencoder_training_state";

impl Stage1Trainer {
    /// Fits the normalization on `train` and initializes the model.
    pub fn new(config: &AutoencoderConfig, hierarchy: &MeshHierarchy, train: &[Vec<f64>]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut model = build_model(config, hierarchy)?;
        model.set_normalization(Normalization::fit(train)?)?;
        Ok(Self {
            best: model.clone(),
            optimizer: SgdState::new(SgdConfig {
                learning_rate: config.learning_rate,
                momentum: config.momentum,
                weight_decay: config.weight_decay,
            }),
            model,
            history: TrainHistory::default(),
            record_time: true,
        })
    }

    /// Leave `wall_time` empty so histories are bit-reproducible.
    pub fn without_timing(mut self) -> Self {
        self.record_time = false;
        self
    }

    pub fn model(&self) -> &AutoencoderModel {
        &self.model
    }

    pub fn best(&self) -> &AutoencoderModel {
        &self.best
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.epochs.len()
    }

    pub fn into_best(self) -> (AutoencoderModel, TrainHistory) {
        (self.best, self.history)
    }

    /// One pass over shuffled mini-batches followed by validation. A
    /// non-finite loss aborts with `DivergedLoss`; the best model so far stays
    /// available.
    pub fn run_epoch(&mut self, train: &[Vec<f64>], val: &[Vec<f64>]) -> Result<&EpochRecord> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let start = Instant::now();
        let epoch = self.epochs_done();
        let config = self.model.config().clone();
        let lr = lr_schedule(epoch, config.learning_rate, config.lr_decay);
        self.optimizer.config.learning_rate = lr;

        let n3 = self.model.vertex_count() * 3;
        if let Some(bad) = train.iter().chain(val).find(|s| s.len() != n3) {
            return Err(Error::ShapeMismatch(format!(
                "shape with {} coordinates for a {}-vertex template",
                bad.len(),
                n3 / 3
            )));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64)));

        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk.len();
            let mut x = Vec::with_capacity(batch * n3);
            for &i in chunk {
                x.extend(self.model.normalization().normalize(&train[i]));
            }
            let loss = self.step(&x, batch)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            loss_sum += loss * batch as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let predictions = self.model.reconstruct_many(val)?;
        let mees = per_sample_mee(&predictions, val)?;
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

    /// One SGD step on a normalized batch; returns the loss before the step.
    pub fn step(&mut self, x: &[f64], batch: usize) -> Result<f64> {
        self.model.zero_grad();
        let (z, enc) = self.model.encode_batch(x, batch)?;
        let (y, dec) = self.model.decode_batch(&z, batch)?;
        // per-vertex L1 distance, averaged over vertices and the batch
        let (loss, grad) = l1_loss_grouped(&y, x, 3)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        let gz = self.model.backward_decoder(&dec, &grad)?;
        self.model.backward_encoder(&enc, &gz)?;
        self.optimizer.step(&mut self.model)?;
        Ok(loss)
    }

    /// Full training state: current and best weights, optimizer velocity,
    /// history.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(STAGE1_STATE_KIND);
        c.push_hierarchy("hierarchy", self.model.hierarchy())?;
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
        ckpt.expect_kind(STAGE1_STATE_KIND)?;
        let hierarchy = ckpt.hierarchy("hierarchy")?;
        let model = AutoencoderModel::read_checkpoint(ckpt, "model", &hierarchy)?;
        let best = AutoencoderModel::read_checkpoint(ckpt, "best", &hierarchy)?;
        let count: usize = ckpt.meta("velocity_count")?;
        let velocity = (0..count)
            .map(|i| Ok(ckpt.get(&format!("velocity.{i}"))?.data.clone()))
            .collect::<Result<Vec<_>>>()?;
        let config = model.config().clone();
        Ok(Self {
            optimizer: SgdState {
                config: SgdConfig {
                    learning_rate: config.learning_rate,
                    momentum: config.momentum,
                    weight_decay: config.weight_decay,
                },
                velocity,
            },
            history: ckpt.meta("history")?,
            record_time: ckpt.meta("record_time")?,
            model,
            best,
        })
    }
}

/// Trains for `config.epochs` epochs and returns the model with the lowest
/// validation MEE.
pub fn train_stage1(
    train: &[Vec<f64>],
    val: &[Vec<f64>],
    config: &AutoencoderConfig,
    hierarchy: &MeshHierarchy,
) -> Result<(AutoencoderModel, TrainHistory)> {
    let mut trainer = Stage1Trainer::new(config, hierarchy, train)?;
    for _ in 0..config.epochs {
        trainer.run_epoch(train, val)?;
    }
    Ok(trainer.into_best())
}
