//! `reconstruct`, `evaluate` and `ablate`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use meshgcn::autoencoder::{per_sample_mee, train_stage1, AutoencoderConfig};
use meshgcn::encoder2d::{reconstruct_from_image, train_stage2, ImagePair};
use meshgcn::eval::{
    bidirectional_error, export_error_map, procrustes_align, region_mask_from_landmarks, AlignMode, EvaluationReport,
    Histogram,
};
use meshgcn::mesh::{load_landmarks, load_mesh, save_landmarks, save_mesh, Vec3};
use meshgcn::sampling::build_hierarchy;
use meshgcn::synth::GrayImage;
use meshgcn::util::atomic_write;
use meshgcn::{Landmark, TriangleMesh};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{landmark_sidecar, load_dataset, Dataset, PGM_FULL_SCALE};
use crate::error::{CliError, CliResult};
use crate::train::{load_autoencoder, load_image_encoder};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructOutput {
    pub latent: Vec<f64>,
    /// Wall time of encode + decode; `None` in deterministic mode.
    pub seconds: Option<f64>,
}

/// Image to mesh through both trained stages. The mesh is written with the
/// template's landmarks in a sidecar so it can be fed to `evaluate`.
pub fn reconstruct(config: &RunConfig, image_path: &Path, out: &Path, deterministic: bool) -> CliResult<ReconstructOutput> {
    if !image_path.exists() {
        return Err(CliError::Missing(format!("image {}", image_path.display())));
    }
    let image = GrayImage::load_pgm(image_path, PGM_FULL_SCALE)?;
    let size = config.encoder2d.image_size;
    if image.width != size || image.height != size {
        return Err(CliError::Config(format!(
            "image is {}x{} but the encoder expects {size}x{size}",
            image.width, image.height
        )));
    }
    let decoder = load_autoencoder(config)?;
    let encoder = load_image_encoder(config)?;
    let start = Instant::now();
    let latent = encoder.encode2d(&image)?;
    let vertices = reconstruct_from_image(&encoder, &decoder, &image)?;
    let seconds = (!deterministic).then(|| start.elapsed().as_secs_f64());
    let mesh = decoder.hierarchy().levels[0].with_flat_vertices(&vertices)?;
    save_mesh(&mesh, out)?;
    if !mesh.landmarks().is_empty() {
        save_landmarks(mesh.landmarks(), landmark_sidecar(out))?;
    }
    Ok(ReconstructOutput { latent, seconds })
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub reconstruction: PathBuf,
    pub scan: PathBuf,
    /// Landmarks of the reconstruction; `<stem>_landmarks.json` if absent.
    pub landmarks: Option<PathBuf>,
    /// Landmarks of the scan; sidecar, then the reconstruction's set.
    pub scan_landmarks: Option<PathBuf>,
    pub out: PathBuf,
    pub error_map: Option<PathBuf>,
    pub margin: f64,
    pub align: AlignMode,
    pub cap: f64,
}

fn read_landmarks(explicit: Option<&Path>, mesh_path: &Path) -> CliResult<Option<Vec<Landmark>>> {
    match explicit {
        Some(p) if !p.exists() => Err(CliError::Missing(format!("landmarks {}", p.display()))),
        Some(p) => Ok(Some(load_landmarks(p)?)),
        None => {
            let sidecar = landmark_sidecar(mesh_path);
            Ok(if sidecar.exists() { Some(load_landmarks(sidecar)?) } else { None })
        }
    }
}

fn load_existing(path: &Path) -> CliResult<TriangleMesh> {
    if !path.exists() {
        return Err(CliError::Missing(format!("mesh {}", path.display())));
    }
    Ok(load_mesh(path)?)
}

/// Landmark positions of both meshes, paired by name in the order of the
/// reconstruction's list.
fn paired_positions(
    recon: &TriangleMesh,
    recon_lm: &[Landmark],
    scan: &TriangleMesh,
    scan_lm: &[Landmark],
) -> CliResult<(Vec<Vec3>, Vec<Vec3>)> {
    let by_name: HashMap<&str, usize> = scan_lm.iter().map(|l| (l.name.as_str(), l.vertex_index)).collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for l in recon_lm {
        if let Some(&j) = by_name.get(l.name.as_str()) {
            let (Some(&p), Some(&q)) = (recon.vertices().get(l.vertex_index), scan.vertices().get(j)) else {
                return Err(CliError::Config(format!("landmark {} is out of range", l.name)));
            };
            a.push(p);
            b.push(q);
        }
    }
    if a.len() < 3 {
        return Err(CliError::Config(format!("{} landmark pairs share a name; at least 3 are needed", a.len())));
    }
    Ok((a, b))
}

/// Aligns the reconstruction onto the scan by its landmarks, then measures
/// point-to-surface error both ways inside the landmark region of the scan.
pub fn evaluate(args: &EvaluateArgs) -> CliResult<EvaluationReport> {
    let recon = load_existing(&args.reconstruction)?;
    let scan = load_existing(&args.scan)?;
    let recon_lm = read_landmarks(args.landmarks.as_deref(), &args.reconstruction)?
        .ok_or_else(|| CliError::Missing(format!("landmarks for {}", args.reconstruction.display())))?;
    let scan_lm = read_landmarks(args.scan_landmarks.as_deref(), &args.scan)?.unwrap_or_else(|| recon_lm.clone());
    let (source, target) = paired_positions(&recon, &recon_lm, &scan, &scan_lm)?;
    let transform = procrustes_align(&source, &target, args.align)?;
    let aligned = transform.apply_mesh(&recon)?;
    let mask = region_mask_from_landmarks(&aligned, &target, args.margin)?;
    let mut report = bidirectional_error(&aligned, &scan, &mask)?;
    let masked: Vec<f64> = report
        .per_vertex
        .iter()
        .zip(&report.mask)
        .filter(|(_, &m)| m)
        .map(|(&e, _)| e)
        .collect();
    report.histogram = Histogram::of(&masked, args.cap);
    report.reconstruction_id = args.reconstruction.display().to_string();
    report.scan_id = args.scan.display().to_string();
    report.transform = Some(transform);
    report.save(&args.out)?;
    if let Some(path) = &args.error_map {
        export_error_map(&aligned, &report.per_vertex, path, args.cap)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Sweep {
    LatentSizes,
    ChebOrders,
    TapSets,
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Self::LatentSizes => "latent_sizes",
            Self::ChebOrders => "cheb_orders",
            Self::TapSets => "tap_sets",
        }
    }
}

/// One CSV row. Column order is fixed by the field order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub sweep: String,
    pub value: String,
    pub val_mee_mean: f64,
    pub val_mee_std: f64,
    pub val_mee_stderr: f64,
    pub n_val: usize,
}

impl AblationRow {
    pub fn from_errors(sweep: Sweep, value: String, errors: &[f64]) -> Self {
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let var = if errors.len() > 1 {
            errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            sweep: sweep.name().into(),
            value,
            val_mee_mean: mean,
            val_mee_std: var.sqrt(),
            val_mee_stderr: (var / n).sqrt(),
            n_val: errors.len(),
        }
    }
}

/// `"none"` is the empty tap set, anything else a comma list of indices.
pub fn parse_tap_set(text: &str) -> CliResult<Vec<usize>> {
    let text = text.trim();
    if text == "none" || text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad tap index {t:?}")))
        })
        .collect()
}

/// Sweep values as given on the command line: numbers separated by commas,
/// or tap sets separated by `;`.
pub fn parse_sweep_values(sweep: Sweep, text: &str) -> CliResult<Vec<String>> {
    let sep = if sweep == Sweep::TapSets { ';' } else { ',' };
    let values: Vec<String> = text.split(sep).map(|s| s.trim().to_string()).collect();
    for v in &values {
        match sweep {
            Sweep::TapSets => {
                parse_tap_set(v)?;
            }
            _ => {
                v.parse::<usize>()
                    .map_err(|_| CliError::Config(format!("bad {} value {v:?}", sweep.name())))?;
            }
        }
    }
    Ok(values)
}

/// Trains one stage-1 model per value on the stored dataset.
pub fn ablate_stage1(config: &RunConfig, data: &Dataset, sweep: Sweep, values: &[String]) -> CliResult<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for value in values {
        let n: usize = value
            .parse()
            .map_err(|_| CliError::Config(format!("bad {} value {value:?}", sweep.name())))?;
        let mut ae: AutoencoderConfig = config.autoencoder.clone();
        match sweep {
            Sweep::LatentSizes => ae.latent_size = n,
            Sweep::ChebOrders => ae.cheb_order = n,
            Sweep::TapSets => unreachable!("tap sets train the image encoder"),
        }
        ae.validate()?;
        let hierarchy = build_hierarchy(&data.template, ae.sampling_factor, ae.sampled_levels())?;
        let (model, _) = train_stage1(&data.train.shapes, &data.val.shapes, &ae, &hierarchy)?;
        let errors = per_sample_mee(&model.reconstruct_many(&data.val.shapes)?, &data.val.shapes)?;
        rows.push(AblationRow::from_errors(sweep, value.clone(), &errors));
    }
    Ok(rows)
}

/// Trains one image encoder per tap set against the stored stage-1 model.
pub fn ablate_taps(config: &RunConfig, data: &Dataset, values: &[String]) -> CliResult<Vec<AblationRow>> {
    let decoder = load_autoencoder(config)?;
    let latents = decoder.encode_many(&data.train.shapes)?;
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
    let mut rows = Vec::new();
    for value in values {
        let mut enc = config.encoder2d.clone();
        enc.taps = parse_tap_set(value)?;
        enc.validate()?;
        let (encoder, _) = train_stage2(&train, &val, &enc, &decoder)?;
        let images: Vec<&GrayImage> = data.val.images.iter().collect();
        let predictions = decoder.decode_many(&encoder.encode_images(&images)?)?;
        let errors = per_sample_mee(&predictions, &data.val.shapes)?;
        rows.push(AblationRow::from_errors(Sweep::TapSets, value.clone(), &errors));
    }
    Ok(rows)
}

pub fn ablate(config: &RunConfig, sweep: Sweep, values: &[String]) -> CliResult<Vec<AblationRow>> {
    let data = load_dataset(config)?;
    match sweep {
        Sweep::TapSets => ablate_taps(config, &data, values),
        _ => ablate_stage1(config, &data, sweep, values),
    }
}

pub fn write_csv(rows: &[AblationRow], path: &Path) -> CliResult<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    atomic_write(path, &bytes)?;
    Ok(())
}
