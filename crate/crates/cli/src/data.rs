//! On-disk layout of a run and the synthetic dataset.

use std::path::{Path, PathBuf};

use meshgcn::mesh::{load_landmarks, load_mesh, primitives, save_landmarks, save_mesh};
use meshgcn::synth::{build_toy_shape_model, generate_dataset, GrayImage, LinearShapeModel, RenderConfig};
use meshgcn::util::{atomic_write, mix_seed};
use meshgcn::TriangleMesh;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Images hold shading values in `[0, 1]`; PGM samples span that range.
pub const PGM_FULL_SCALE: f64 = 1.0;

/// File locations under `output_dir`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            root: config.output_dir.clone(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }

    pub fn ae_dir(&self) -> PathBuf {
        self.root.join("autoencoder")
    }

    pub fn encoder_dir(&self) -> PathBuf {
        self.root.join("encoder2d")
    }

    pub fn ae_model(&self) -> PathBuf {
        self.ae_dir().join("model.mgcn")
    }

    pub fn encoder_model(&self) -> PathBuf {
        self.encoder_dir().join("model.mgcn")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub shape: String,
    pub image: String,
    pub coefficients: Vec<f64>,
}

/// Index of a generated dataset. Paths are relative to the data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub template: String,
    pub landmarks: String,
    pub shape_model: String,
    pub render: RenderConfig,
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
}

pub struct Split {
    pub shapes: Vec<Vec<f64>>,
    pub images: Vec<GrayImage>,
}

pub struct Dataset {
    pub template: TriangleMesh,
    pub train: Split,
    pub val: Split,
}

/// Template mesh from the config: a file with its landmark sidecar, or the
/// built-in head.
pub fn load_template(config: &RunConfig) -> CliResult<TriangleMesh> {
    match &config.hierarchy.template {
        None => Ok(primitives::toy_head(config.hierarchy.subdivisions)),
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Missing(format!("template {}", path.display())));
            }
            let mesh = load_mesh(path)?;
            let sidecar = landmark_sidecar(path);
            if sidecar.exists() {
                Ok(mesh.with_landmarks(load_landmarks(&sidecar)?)?)
            } else {
                Ok(mesh)
            }
        }
    }
}

/// `face.obj` -> `face_landmarks.json`.
pub fn landmark_sidecar(mesh_path: &Path) -> PathBuf {
    let stem = mesh_path.file_stem().unwrap_or_default().to_string_lossy();
    mesh_path.with_file_name(format!("{stem}_landmarks.json"))
}

/// Builds the shape model, samples both splits and writes meshes, PGM
/// images and the manifest.
pub fn generate(config: &RunConfig) -> CliResult<Manifest> {
    let layout = Layout::new(config);
    let template = load_template(config)?;
    let model = build_toy_shape_model(&template, config.data.num_modes, mix_seed(config.seed, 0))?;
    let render = config.render.render_config();
    let dir = layout.data_dir();
    std::fs::create_dir_all(dir.join("train"))?;
    std::fs::create_dir_all(dir.join("val"))?;
    save_mesh(&template, dir.join("template.obj"))?;
    save_landmarks(template.landmarks(), dir.join("template_landmarks.json"))?;
    atomic_write(&dir.join("shape_model.json"), serde_json::to_string(&model)?.as_bytes())?;

    let mut splits = Vec::new();
    for (name, count, stream) in [("train", config.data.train_count, 1), ("val", config.data.val_count, 2)] {
        let samples = generate_dataset(&model, &template, count, &render, mix_seed(config.seed, stream))?;
        let entries = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let shape = format!("{name}/{i:06}.obj");
                let image = format!("{name}/{i:06}.pgm");
                save_mesh(&template.with_flat_vertices(&s.shape)?, dir.join(&shape))?;
                s.image.save_pgm(dir.join(&image), PGM_FULL_SCALE)?;
                Ok(ManifestEntry {
                    shape,
                    image,
                    coefficients: s.coefficients.clone(),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        splits.push(entries);
    }
    let val = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");
    let manifest = Manifest {
        seed: config.seed,
        template: "template.obj".into(),
        landmarks: "template_landmarks.json".into(),
        shape_model: "shape_model.json".into(),
        render,
        train,
        val,
    };
    atomic_write(&layout.manifest(), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn load_shape_model(config: &RunConfig) -> CliResult<LinearShapeModel> {
    let path = Layout::new(config).data_dir().join("shape_model.json");
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Reads the dataset written by [`generate`]; exit code 4 if it is absent.
pub fn load_dataset(config: &RunConfig) -> CliResult<Dataset> {
    let layout = Layout::new(config);
    let path = layout.manifest();
    if !path.exists() {
        return Err(CliError::Missing(format!(
            "dataset manifest {} (run `mgcn generate` first)",
            path.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let dir = layout.data_dir();
    let template = load_mesh(dir.join(&manifest.template))?.with_landmarks(load_landmarks(dir.join(&manifest.landmarks))?)?;
    let load = |entries: &[ManifestEntry]| -> CliResult<Split> {
        let loaded = entries
            .par_iter()
            .map(|e| {
                let mesh = load_mesh(dir.join(&e.shape))?;
                if mesh.vertex_count() != template.vertex_count() {
                    return Err(CliError::Io(format!("{} does not match the template", e.shape)));
                }
                let image = GrayImage::load_pgm(dir.join(&e.image), PGM_FULL_SCALE)?;
                Ok((mesh.flat_vertices(), image))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let (shapes, images) = loaded.into_iter().unzip();
        Ok(Split { shapes, images })
    };
    Ok(Dataset {
        train: load(&manifest.train)?,
        val: load(&manifest.val)?,
        template,
    })
}
