use crate::error::Result;
use crate::param::{Mode, Parameter};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A differentiable building block.
///
/// `forward` caches whatever `backward` needs; `backward` consumes that cache,
/// accumulates parameter gradients and returns the gradient with respect to the
/// input. `infer` is an evaluation-mode forward that leaves the layer untouched,
/// so a trained model can be shared between threads.
pub trait Layer<T: Scalar>: Send + Sync {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>>;

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Parameter<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        Vec::new()
    }
}

/// Collapses every axis after the first.
#[derive(Debug, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.input_shape = Some(input.shape().to_vec());
        self.infer(input)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.take().ok_or(crate::NnError::NoForwardCache("flatten"))?;
        grad_output.clone().reshape(&shape)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let b = input.shape()[0];
        let rest = input.len() / b;
        input.clone().reshape(&[b, rest])
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<T: Scalar> {
    pub layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Box<dyn Layer<T>>>) -> Self {
        Self { layers }
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_output.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
