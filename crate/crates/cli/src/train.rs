//! `train-ae` and `train-2d`: epoch loops with a resumable state file.

use std::path::Path;

use meshgcn::autoencoder::{AutoencoderModel, EpochRecord, Stage1Trainer, TrainHistory};
use meshgcn::checkpoint::Checkpoint;
use meshgcn::encoder2d::{ImageEncoder, ImagePair, Stage2Trainer};
use meshgcn::sampling::build_hierarchy;
use meshgcn::util::atomic_write;

use crate::config::RunConfig;
use crate::data::{load_dataset, Layout};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Leave wall-clock times out of the history.
    pub deterministic: bool,
    /// Continue from the state file of an earlier, interrupted run.
    pub resume: bool,
    /// Stop once this many epochs are done (the run can be resumed later).
    pub until_epoch: Option<usize>,
    pub quiet: bool,
}

fn report(options: &TrainOptions, stage: &str, r: &EpochRecord) {
    if !options.quiet {
        eprintln!(
            "{stage} epoch {:4}  loss {:.5}  val MEE {:.4}  lr {:.6}",
            r.epoch, r.train_loss, r.val_mee, r.learning_rate
        );
    }
}

fn load_checkpoint(path: &Path, what: &str) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::Missing(format!("{what} {}", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn save_history(path: &Path, history: &TrainHistory) -> CliResult<()> {
    atomic_write(path, serde_json::to_string_pretty(history)?.as_bytes())?;
    Ok(())
}

/// Stage 1. Writes `autoencoder/{model.mgcn, history.json, state.mgcn}`; the
/// model file holds the best-validation weights.
pub fn train_autoencoder(config: &RunConfig, options: &TrainOptions) -> CliResult<TrainHistory> {
    let layout = Layout::new(config);
    let data = load_dataset(config)?;
    let dir = layout.ae_dir();
    std::fs::create_dir_all(&dir)?;
    let state_path = dir.join("state.mgcn");
    let mut trainer = if options.resume {
        let t = Stage1Trainer::from_checkpoint(&load_checkpoint(&state_path, "training state")?)?;
        if t.model().config() != &config.autoencoder {
            return Err(CliError::Config("autoencoder config differs from the interrupted run".into()));
        }
        t
    } else {
        let ae = &config.autoencoder;
        let hierarchy = build_hierarchy(&data.template, ae.sampling_factor, ae.sampled_levels())?;
        let t = Stage1Trainer::new(ae, &hierarchy, &data.train.shapes)?;
        if options.deterministic {
            t.without_timing()
        } else {
            t
        }
    };
    let stop = options.until_epoch.unwrap_or(usize::MAX).min(config.autoencoder.epochs);
    let mut outcome = Ok(());
    while trainer.epochs_done() < stop {
        match trainer.run_epoch(&data.train.shapes, &data.val.shapes) {
            Ok(r) => report(options, "train-ae", r),
            Err(e) => {
                outcome = Err(CliError::from(e));
                break;
            }
        }
        trainer.to_checkpoint()?.save(&state_path)?;
    }
    // the best model so far is written even when training diverged
    if trainer.history().best_epoch.is_some() {
        trainer.best().to_checkpoint()?.save(layout.ae_model())?;
    }
    save_history(&dir.join("history.json"), trainer.history())?;
    outcome.map(|_| trainer.history().clone())
}

pub fn load_autoencoder(config: &RunConfig) -> CliResult<AutoencoderModel> {
    let path = Layout::new(config).ae_model();
    let ckpt = load_checkpoint(&path, "stage-1 checkpoint (run `mgcn train-ae` first)")?;
    Ok(AutoencoderModel::from_checkpoint(&ckpt)?)
}

pub fn load_image_encoder(config: &RunConfig) -> CliResult<ImageEncoder> {
    let path = Layout::new(config).encoder_model();
    let ckpt = load_checkpoint(&path, "stage-2 checkpoint (run `mgcn train-2d` first)")?;
    Ok(ImageEncoder::from_checkpoint(&ckpt)?)
}

/// Stage 2 against the frozen stage-1 model. Writes
/// `encoder2d/{model.mgcn, history.json, state.mgcn}`.
pub fn train_image_encoder(config: &RunConfig, options: &TrainOptions) -> CliResult<TrainHistory> {
    let layout = Layout::new(config);
    let autoencoder = load_autoencoder(config)?;
    let data = load_dataset(config)?;
    let latents = autoencoder.encode_many(&data.train.shapes)?;
    let train: Vec<ImagePair> = data
        .train
        .images
        .iter()
        .zip(&latents)
        .map(|(image, z)| ImagePair { image, target: z })
        .collect();
    let val: Vec<ImagePair> = data
        .val
        .images
        .iter()
        .zip(&data.val.shapes)
        .map(|(image, s)| ImagePair { image, target: s })
        .collect();

    let dir = layout.encoder_dir();
    std::fs::create_dir_all(&dir)?;
    let state_path = dir.join("state.mgcn");
    let mut trainer = if options.resume {
        let t = Stage2Trainer::from_checkpoint(&load_checkpoint(&state_path, "training state")?)?;
        if t.model().config() != &config.encoder2d {
            return Err(CliError::Config("encoder2d config differs from the interrupted run".into()));
        }
        t
    } else {
        let t = Stage2Trainer::new(&config.encoder2d, &autoencoder)?;
        if options.deterministic {
            t.without_timing()
        } else {
            t
        }
    };
    let stop = options.until_epoch.unwrap_or(usize::MAX).min(config.encoder2d.epochs);
    let mut outcome = Ok(());
    while trainer.epochs_done() < stop {
        match trainer.run_epoch(&train, &val, &autoencoder) {
            Ok(r) => report(options, "train-2d", r),
            Err(e) => {
                outcome = Err(CliError::from(e));
                break;
            }
        }
        trainer.to_checkpoint()?.save(&state_path)?;
    }
    if trainer.history().best_epoch.is_some() {
        trainer.best().to_checkpoint()?.save(layout.encoder_model())?;
    }
    save_history(&dir.join("history.json"), trainer.history())?;
    outcome.map(|_| trainer.history().clone())
}
