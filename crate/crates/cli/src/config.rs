use std::path::{Path, PathBuf};

use meshgcn::autoencoder::AutoencoderConfig;
use meshgcn::encoder2d::Encoder2DConfig;
use meshgcn::eval::{AlignMode, DEFAULT_ERROR_CAP};
use meshgcn::synth::{RenderConfig, RenderMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Everything a pipeline run depends on. Unknown keys are rejected and every
/// seed has to be written out: the top-level `seed` drives the shape model
/// and the samples, `autoencoder.seed` and `encoder2d.seed` the training runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub hierarchy: HierarchyConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub render: RenderSection,
    pub autoencoder: AutoencoderConfig,
    pub encoder2d: Encoder2DConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchyConfig {
    /// OBJ or PLY template with a `<stem>_landmarks.json` sidecar; the
    /// built-in toy head when absent.
    pub template: Option<PathBuf>,
    /// Icosphere subdivisions of the built-in head (3 gives 642 vertices).
    pub subdivisions: u32,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            template: None,
            subdivisions: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_count: usize,
    pub val_count: usize,
    pub num_modes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_count: 500,
            val_count: 50,
            num_modes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub image_size: usize,
    pub mode: RenderMode,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            image_size: 64,
            mode: RenderMode::GrayscaleLambertian,
        }
    }
}

impl RenderSection {
    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            mode: self.mode,
            ..RenderConfig::frontal(self.image_size)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Growth of the landmark hull, millimetres.
    pub margin: f64,
    pub error_cap: f64,
    pub align: AlignMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            margin: 5.0,
            error_cap: DEFAULT_ERROR_CAP,
            align: AlignMode::Rigid,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for section in ["autoencoder", "encoder2d"] {
            if value.get(section).and_then(|s| s.get("seed")).is_none() {
                return Err(CliError::Config(format!("{section}.seed must be given explicitly")));
            }
        }
        let config: Self = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.autoencoder.validate()?;
        self.encoder2d.validate()?;
        self.render.render_config().validate()?;
        let bad = |m: String| Err(CliError::Config(m));
        if self.data.train_count == 0 || self.data.val_count == 0 {
            return bad("data counts must be positive".into());
        }
        if self.data.num_modes == 0 {
            return bad("num_modes must be positive".into());
        }
        if self.encoder2d.image_size != self.render.image_size {
            return bad(format!(
                "encoder2d.image_size {} differs from render.image_size {}",
                self.encoder2d.image_size, self.render.image_size
            ));
        }
        if self.encoder2d.latent_size != self.autoencoder.latent_size {
            return bad(format!(
                "encoder2d.latent_size {} differs from autoencoder.latent_size {}",
                self.encoder2d.latent_size, self.autoencoder.latent_size
            ));
        }
        if self.encoder2d.latent_relu != self.autoencoder.latent_relu {
            return bad("encoder2d.latent_relu must match autoencoder.latent_relu".into());
        }
        if !(self.eval.margin >= 0.0 && self.eval.error_cap > 0.0) {
            return bad("eval margin must be >= 0 and error_cap > 0".into());
        }
        Ok(())
    }

    /// The toy setting used by the acceptance run: 642-vertex head, 500/50
    /// samples, latent 16, 64x64 renders.
    pub fn toy(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed: 1,
            output_dir: output_dir.into(),
            hierarchy: HierarchyConfig::default(),
            data: DataConfig::default(),
            render: RenderSection::default(),
            autoencoder: AutoencoderConfig::toy(),
            encoder2d: Encoder2DConfig::toy(),
            eval: EvalConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_round_trips_and_validates() {
        let c = RunConfig::toy("out");
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_missing_seeds_are_rejected() {
        let c = RunConfig::toy("out");
        let mut v = serde_json::to_value(&c).unwrap();
        v["data"]["colour"] = serde_json::json!(1);
        assert!(matches!(RunConfig::parse(&v.to_string()), Err(CliError::Config(_))));
        let mut v = serde_json::to_value(&c).unwrap();
        v["autoencoder"].as_object_mut().unwrap().remove("seed");
        assert!(RunConfig::parse(&v.to_string()).is_err());
        let mut v = serde_json::to_value(&c).unwrap();
        v.as_object_mut().unwrap().remove("seed");
        assert!(RunConfig::parse(&v.to_string()).is_err());
    }

    #[test]
    fn latent_sizes_must_agree() {
        let mut c = RunConfig::toy("out");
        c.encoder2d.latent_size = 8;
        assert!(c.validate().is_err());
    }
}
