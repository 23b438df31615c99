use super::check_len;
use crate::error::{Error, Result};

/// Mean absolute error and its gradient `sign(p - t) / count` (`sign(0) = 0`).
pub fn l1_loss(prediction: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    l1_loss_grouped(prediction, target, 1)
}

/// L1 distance within consecutive groups of `group` values (a vertex, a
/// latent code), averaged over groups. Equals `group * l1_loss`.
pub fn l1_loss_grouped(prediction: &[f64], target: &[f64], group: usize) -> Result<(f64, Vec<f64>)> {
    check_len("l1 target", target.len(), prediction.len())?;
    if group == 0 || !prediction.len().is_multiple_of(group) {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not split into groups of {group}",
            prediction.len()
        )));
    }
    let count = (prediction.len() / group).max(1) as f64;
    let mut loss = 0.0;
    let grad = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d.abs();
            if d > 0.0 {
                1.0 / count
            } else if d < 0.0 {
                -1.0 / count
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / count, grad))
}
