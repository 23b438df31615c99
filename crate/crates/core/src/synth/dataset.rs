use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{render, GrayImage, LinearShapeModel, RenderConfig};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::util::mix_seed;

/// Coefficients beyond this many standard deviations are redrawn.
pub const TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub shape: Vec<f64>,
    pub image: GrayImage,
    pub coefficients: Vec<f64>,
}

/// Standard-normal coefficients truncated to `|c| <= TRUNCATION` by
/// rejection.
pub fn sample_coefficients(num_modes: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..num_modes)
        .map(|_| loop {
            let c: f64 = StandardNormal.sample(rng);
            if c.abs() <= TRUNCATION {
                break c;
            }
        })
        .collect()
}

/// Draws `count` shapes from `model` and renders each with `template`'s
/// connectivity. Sample `i` depends only on `(seed, i)`, so the result is
/// identical for any thread count.
pub fn generate_dataset(
    model: &LinearShapeModel,
    template: &TriangleMesh,
    count: usize,
    config: &RenderConfig,
    seed: u64,
) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    if template.vertex_count() != model.vertex_count() {
        return Err(Error::ShapeMismatch(format!(
            "template has {} vertices, model {}",
            template.vertex_count(),
            model.vertex_count()
        )));
    }
    config.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let coefficients = sample_coefficients(model.num_modes(), &mut rng);
            let shape = model.sample_shape(&coefficients)?;
            let mesh = template.with_flat_vertices(&shape)?;
            let image = render(&mesh, config)?;
            Ok(Sample {
                shape,
                image,
                coefficients,
            })
        })
        .collect()
}
