use meshgcn::autoencoder::{mean_shape_baseline, per_sample_mee, train_stage1, AutoencoderConfig, AutoencoderModel};
use meshgcn::encoder2d::{train_stage2, Encoder2DConfig, ImagePair};
use meshgcn::mesh::primitives::toy_head;
use meshgcn::sampling::{build_hierarchy, MeshHierarchy};
use meshgcn::synth::{build_toy_shape_model, generate_dataset, GrayImage, RenderConfig, Sample};

use crate::{ensure, Check};

/// Shapes seen by stage 1; stage 2 uses every training render.
const STAGE1_SHAPES: usize = 500;
const STAGE2_PAIRS: usize = 2000;
const VAL: usize = 200;
const STAGE1_EPOCHS: usize = 60;
const STAGE2_EPOCHS: usize = 50;

pub struct ToyData {
    hierarchy: MeshHierarchy,
    train: Vec<Sample>,
    val: Vec<Sample>,
    train_shapes: Vec<Vec<f64>>,
    val_shapes: Vec<Vec<f64>>,
}

impl ToyData {
    pub fn generate() -> Self {
        let head = toy_head(3);
        let model = build_toy_shape_model(&head, 8, 1).unwrap();
        let render = RenderConfig::frontal(64);
        let train = generate_dataset(&model, &head, STAGE2_PAIRS, &render, 2).unwrap();
        let val = generate_dataset(&model, &head, VAL, &render, 3).unwrap();
        Self {
            hierarchy: build_hierarchy(&head, 4, 2).unwrap(),
            train_shapes: train[..STAGE1_SHAPES].iter().map(|s| s.shape.clone()).collect(),
            val_shapes: val.iter().map(|s| s.shape.clone()).collect(),
            train,
            val,
        }
    }
}

pub struct Stage1Run {
    model: AutoencoderModel,
    errors: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn stderr(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// Toy recipe: momentum 0.9, weight decay 5e-4, lr 0.008 decaying by 0.98
/// per epoch, batch 16, L1 loss.
fn recipe() -> AutoencoderConfig {
    AutoencoderConfig {
        epochs: STAGE1_EPOCHS,
        seed: 5,
        ..AutoencoderConfig::toy()
    }
}

fn run_stage1(data: &ToyData, config: &AutoencoderConfig) -> Result<Stage1Run, String> {
    let (model, _) = train_stage1(&data.train_shapes, &data.val_shapes, config, &data.hierarchy).map_err(|e| e.to_string())?;
    let predictions = model.reconstruct_many(&data.val_shapes).map_err(|e| e.to_string())?;
    let errors = per_sample_mee(&predictions, &data.val_shapes).map_err(|e| e.to_string())?;
    Ok(Stage1Run { model, errors })
}

pub fn stage1(data: &ToyData) -> (Check, Option<Stage1Run>) {
    let config = recipe();
    let check = |run: &Stage1Run| -> Check {
        ensure!(
            config.latent_size == 16 && config.cheb_order == 6 && data.hierarchy.levels[0].vertex_count() == 642,
            "toy setting drifted"
        );
        let baseline = mean_shape_baseline(&run.model.normalization().mean, &data.val_shapes).map_err(|e| e.to_string())?;
        let mee = mean(&run.errors);
        ensure!(mee < 0.5 * baseline, "val MEE {mee:.3} mm vs baseline {baseline:.3} mm");
        Ok(format!(
            "val MEE {mee:.3} mm, mean-shape baseline {baseline:.3} mm (ratio {:.2}) after {STAGE1_EPOCHS} epochs",
            mee / baseline
        ))
    };
    match run_stage1(data, &config) {
        Ok(run) => (check(&run), Some(run)),
        Err(e) => (Err(e), None),
    }
}

fn base_run(base: Option<&Stage1Run>) -> Result<&Stage1Run, String> {
    base.ok_or_else(|| "needs the latent-16, K = 6 model, which did not train".to_string())
}

pub fn latent_trend(data: &ToyData, base: Option<&Stage1Run>) -> Check {
    let base = base_run(base)?;
    let small = run_stage1(data, &AutoencoderConfig { latent_size: 4, ..recipe() })?;
    let (m4, m16) = (mean(&small.errors), mean(&base.errors));
    let se = (stderr(&small.errors).powi(2) + stderr(&base.errors).powi(2)).sqrt();
    ensure!(m4 - m16 > se, "MEE(4) {m4:.3} vs MEE(16) {m16:.3}, standard error {se:.3}");
    Ok(format!("MEE(4) {m4:.3} > MEE(16) {m16:.3} mm, gap {:.3} vs standard error {se:.3}", m4 - m16))
}

pub fn order_trend(data: &ToyData, base: Option<&Stage1Run>) -> Check {
    let base = base_run(base)?;
    let low = run_stage1(data, &AutoencoderConfig { cheb_order: 2, ..recipe() })?;
    let (m2, m6) = (mean(&low.errors), mean(&base.errors));
    ensure!(m2 >= m6, "MEE(K=2) {m2:.4} < MEE(K=6) {m6:.4}");
    Ok(format!("MEE(K=2) {m2:.3} >= MEE(K=6) {m6:.3} mm"))
}

fn l1(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n: usize = a.iter().map(Vec::len).sum();
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum::<f64>()
        / n as f64
}

pub fn stage2(data: &ToyData, base: Option<&Stage1Run>) -> Check {
    let decoder = &base_run(base)?.model;
    let err = |e: meshgcn::Error| e.to_string();
    let shapes: Vec<Vec<f64>> = data.train.iter().map(|s| s.shape.clone()).collect();
    let latents = decoder.encode_many(&shapes).map_err(err)?;
    let val_latents = decoder.encode_many(&data.val_shapes).map_err(err)?;
    let dim = decoder.latent_size();
    let mean_latent: Vec<f64> = (0..dim).map(|j| latents.iter().map(|z| z[j]).sum::<f64>() / latents.len() as f64).collect();
    let constant_l1 = l1(&vec![mean_latent; data.val.len()], &val_latents);
    let baseline = mean_shape_baseline(&decoder.normalization().mean, &data.val_shapes).map_err(err)?;

    let train: Vec<ImagePair> = data
        .train
        .iter()
        .zip(&latents)
        .map(|(s, z)| ImagePair { image: &s.image, target: z })
        .collect();
    let val: Vec<ImagePair> = data.val.iter().map(|s| ImagePair { image: &s.image, target: &s.shape }).collect();
    let images: Vec<&GrayImage> = data.val.iter().map(|s| &s.image).collect();
    let run = |taps: Vec<usize>| -> Result<(f64, f64), String> {
        let config = Encoder2DConfig {
            taps,
            epochs: STAGE2_EPOCHS,
            seed: 9,
            ..Encoder2DConfig::toy()
        };
        let (encoder, _) = train_stage2(&train, &val, &config, decoder).map_err(err)?;
        let predicted = encoder.encode_images(&images).map_err(err)?;
        let mee = mean(&per_sample_mee(&decoder.decode_many(&predicted).map_err(err)?, &data.val_shapes).map_err(err)?);
        Ok((l1(&predicted, &val_latents), mee))
    };
    let (latent_l1, mee) = run(vec![0, 1])?;
    let ratio = latent_l1 / constant_l1;
    ensure!(ratio < 0.25, "latent L1 {latent_l1:.4} is {ratio:.3} of the constant predictor's {constant_l1:.4}");
    ensure!(mee < baseline, "2D-to-3D MEE {mee:.3} mm vs baseline {baseline:.3} mm");
    let (_, mee_none) = run(Vec::new())?;
    ensure!(mee <= mee_none, "two taps {mee:.3} mm vs no taps {mee_none:.3} mm");
    Ok(format!(
        "latent L1 ratio {ratio:.3}, 2D-to-3D MEE {mee:.3} mm vs baseline {baseline:.3} mm, no taps {mee_none:.3} mm"
    ))
}
