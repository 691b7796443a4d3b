//! Small shared pieces: affine application and parameter initialization.

use std::rc::Rc;

use dstgtn_tensor::{Element, ParamRegistry, Parameter, Tensor, TensorError};

use crate::error::ModelError;
use crate::rng::Lcg64;

/// `x[..., K] @ w[K, M] (+ b[M])` applied per position.
pub fn linear<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>, TensorError> {
    let y = x.matmul(w)?;
    match b {
        Some(bias) => {
            let bb = bias.broadcast_to(y.shape())?;
            y.add(&bb)
        }
        None => Ok(y),
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Builds parameters in registry order from one seed stream: weights and
/// tables draw uniform ±sqrt(1/fan_in), biases and norm offsets start at
/// fixed values.
pub struct ParamInit<'a, T: Element> {
    pub registry: &'a mut ParamRegistry<T>,
    pub rng: &'a mut Lcg64,
}

impl<'a, T: Element> ParamInit<'a, T> {
    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
    ) -> Result<Rc<Parameter<T>>, ModelError> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values: Vec<T> = (0..n).map(|_| T::of(self.rng.uniform_in(-bound, bound))).collect();
        Ok(self.registry.add(name, shape, values)?)
    }

    pub fn constant(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        value: f64,
    ) -> Result<Rc<Parameter<T>>, ModelError> {
        let n: usize = shape.iter().product();
        Ok(self.registry.add(name, shape, vec![T::of(value); n])?)
    }

    pub fn zeros(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
    ) -> Result<Rc<Parameter<T>>, ModelError> {
        self.constant(name, shape, 0.0)
    }

    /// gain = 1, bias = 0 pair for a layer norm over `width` features.
    pub fn layer_norm_pair(
        &mut self,
        prefix: &str,
        width: usize,
    ) -> Result<(Rc<Parameter<T>>, Rc<Parameter<T>>), ModelError> {
        let gain = self.constant(format!("{prefix}.gain"), &[width], 1.0)?;
        let bias = self.zeros(format!("{prefix}.bias"), &[width])?;
        Ok((gain, bias))
    }
}
