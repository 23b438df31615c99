use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check_len;
use crate::error::{Error, Result};

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Gradient through ReLU given its *output*; the subgradient at 0 is 0.
pub fn relu_backward(output: &[f64], grad_out: &[f64]) -> Result<Vec<f64>> {
    check_len("relu upstream gradient", grad_out.len(), output.len())?;
    Ok(output
        .iter()
        .zip(grad_out)
        .map(|(o, g)| if *o > 0.0 { *g } else { 0.0 })
        .collect())
}

/// Per-unit multipliers applied by inverted dropout: `0` or `1 / (1 - p)`.
#[derive(Debug, Clone)]
pub struct DropoutMask(Option<Vec<f64>>);

/// Inverted dropout. In training mode each unit is zeroed with probability
/// `p` and survivors are scaled by `1 / (1 - p)`; in inference mode the input
/// passes through unchanged.
pub fn dropout_forward(x: &[f64], p: f64, seed: u64, training: bool) -> Result<(Vec<f64>, DropoutMask)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    if !training || p == 0.0 {
        return Ok((x.to_vec(), DropoutMask(None)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = x
        .iter()
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let y = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((y, DropoutMask(Some(mask))))
}

pub fn dropout_backward(mask: &DropoutMask, grad_out: &[f64]) -> Result<Vec<f64>> {
    match &mask.0 {
        None => Ok(grad_out.to_vec()),
        Some(m) => {
            check_len("dropout upstream gradient", grad_out.len(), m.len())?;
            Ok(grad_out.iter().zip(m).map(|(g, k)| g * k).collect())
        }
    }
}
