//! Differentiable building blocks with hand-written gradients.
//!
//! Activations are row-major `f64` tensors with a leading batch dimension.
//! Layers return a cache from `forward` that `backward` consumes; parameter
//! gradients accumulate into the parameter tensors until `zero_grad`.

mod activation;
mod cheb;
mod dense;
pub mod linalg;
mod loss;
mod optim;

pub use activation::{dropout_backward, dropout_forward, relu_backward, relu_forward, DropoutMask};
pub use cheb::{ChebCache, ChebConv};
pub use dense::{Dense, DenseCache};
pub use loss::{l1_loss, l1_loss_grouped};
pub use optim::{lr_schedule, SgdConfig, SgdState};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor with an optional gradient buffer of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
            grad: None,
        }
    }

    /// A trainable tensor: zero-initialized gradient attached.
    pub fn parameter(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(shape, values)?;
        t.grad = Some(vec![0.0; t.values.len()]);
        Ok(t)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::parameter(shape, values).expect("length matches shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Replaces the values, keeping shape. Used when restoring checkpoints.
    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot assign {} values to a tensor of shape {:?}",
                values.len(),
                self.shape
            )));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }
}

/// Visits every trainable tensor of a model in a fixed order.
pub trait Parameters {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, t| t.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::ShapeMismatch(format!(
            "{what}: expected {expected} values, got {got}"
        )));
    }
    Ok(())
}
