use serde::{Deserialize, Serialize};

use super::{Parameters, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// SGD with momentum and coupled L2 weight decay:
/// `v <- mu v + g + lambda theta`, `theta <- theta - eta v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub config: SgdConfig,
    pub velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    /// Updates the given tensors in place from their accumulated gradients.
    pub fn step_tensors(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if v.len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "velocity of length {} for a tensor of {}",
                    v.len(),
                    p.len()
                )));
            }
            update(p, v, &self.config);
        }
        Ok(())
    }

    /// Steps every parameter of a model, in its visiting order.
    pub fn step<M: Parameters + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut index = 0;
        let mut result = Ok(());
        let config = self.config;
        let velocity = &mut self.velocity;
        let initialize = velocity.is_empty();
        model.visit_params_mut(&mut |_, p| {
            if result.is_err() {
                return;
            }
            if initialize {
                velocity.push(vec![0.0; p.len()]);
            }
            let Some(v) = velocity.get_mut(index) else {
                result = Err(Error::ShapeMismatch("optimizer state has too few tensors".into()));
                return;
            };
            index += 1;
            if v.len() != p.len() {
                result = Err(Error::ShapeMismatch("velocity length differs from parameter".into()));
                return;
            }
            update(p, v, &config);
        });
        result?;
        if index != self.velocity.len() {
            return Err(Error::ShapeMismatch("optimizer state has too many tensors".into()));
        }
        Ok(())
    }
}

fn update(p: &mut Tensor, velocity: &mut [f64], config: &SgdConfig) {
    let grad = p.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; velocity.len()]);
    for ((theta, vel), g) in p.values_mut().iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *vel = config.momentum * *vel + g + config.weight_decay * *theta;
        *theta -= config.learning_rate * *vel;
    }
}

/// `base * decay^epoch`.
pub fn lr_schedule(epoch: usize, base: f64, decay: f64) -> f64 {
    base * decay.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: Vec<f64>, grad: Vec<f64>) -> Tensor {
        let mut t = Tensor::parameter(vec![values.len()], values).unwrap();
        t.grad_mut().copy_from_slice(&grad);
        t
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = param(vec![1.0, -2.0], vec![0.0, 0.0]);
        let mut sgd = SgdState::new(SgdConfig { learning_rate: 0.1, momentum: 0.9, weight_decay: 0.0 });
        sgd.step_tensors(&mut [&mut p]).unwrap();
        assert_eq!(p.values(), &[1.0, -2.0]);
    }

    #[test]
    fn plain_step() {
        let mut p = param(vec![1.0, -2.0], vec![0.5, -1.0]);
        let mut sgd = SgdState::new(SgdConfig { learning_rate: 0.1, momentum: 0.0, weight_decay: 0.0 });
        sgd.step_tensors(&mut [&mut p]).unwrap();
        assert_eq!(p.values(), &[1.0 - 0.1 * 0.5, -2.0 + 0.1]);
    }

    #[test]
    fn momentum_two_steps() {
        // hand-unrolled: v1 = g, v2 = 0.9 g + g; displacement eta g (1 + 1.9)
        let (eta, g) = (0.01, 0.7);
        let mut p = param(vec![0.0], vec![g]);
        let mut sgd = SgdState::new(SgdConfig { learning_rate: eta, momentum: 0.9, weight_decay: 0.0 });
        sgd.step_tensors(&mut [&mut p]).unwrap();
        sgd.step_tensors(&mut [&mut p]).unwrap();
        assert!((p.values()[0] + eta * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_schedule(0, 0.008, 0.98), 0.008);
        assert!((lr_schedule(1, 0.008, 0.98) - 0.00784).abs() < 1e-15);
        assert_eq!(lr_schedule(37, 0.01, 1.0), 0.01);
    }
}
