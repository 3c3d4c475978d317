use rand::Rng;

use crate::conv::accumulate;
use crate::error::{shape_err, NnError, Result};
use crate::layer::Layer;
use crate::param::{join, Mode, Parameter};
use crate::scalar::{gemm, MatMut, MatRef, Scalar};
use crate::tensor::Tensor;

/// `input (B x I) * weight (I x O) + bias (O)`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (b, i) = input.dims2("linear")?;
    let (wi, o) = weight.dims2("linear")?;
    if wi != i {
        return shape_err("linear", format!("input width {i}, weight expects {wi}"));
    }
    let mut out = Tensor::zeros(&[b, o]);
    if let Some(bias) = bias {
        if bias.shape() != [o] {
            return shape_err("linear", format!("bias shape {:?}, expected [{o}]", bias.shape()));
        }
        for row in out.data_mut().chunks_mut(o) {
            row.copy_from_slice(bias.data());
        }
    }
    gemm(T::one(), MatRef::new(input.data(), b, i), MatRef::new(weight.data(), i, o), T::one(), MatMut::new(out.data_mut(), b, o));
    Ok(out)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, i) = input.dims2("linear_backward")?;
    let (_, o) = weight.dims2("linear_backward")?;
    if grad_output.shape() != [b, o] {
        return shape_err("linear_backward", format!("grad shape {:?}", grad_output.shape()));
    }
    let dy = MatRef::new(grad_output.data(), b, o);
    let mut dx = Tensor::zeros(&[b, i]);
    gemm(T::one(), dy, MatRef::new(weight.data(), i, o).t(), T::zero(), MatMut::new(dx.data_mut(), b, i));
    let mut dw = Tensor::zeros(&[i, o]);
    gemm(T::one(), MatRef::new(input.data(), b, i).t(), dy, T::zero(), MatMut::new(dw.data_mut(), i, o));
    let mut db = Tensor::zeros(&[o]);
    for row in grad_output.data().chunks(o) {
        for (acc, &g) in db.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok((dx, dw, db))
}

#[derive(Debug, Clone)]
pub struct Linear<T = f32> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform initialization with bound `1 / sqrt(in_features)`.
    pub fn new(prefix: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            weight: Parameter::uniform(join(prefix, "weight"), &[in_features, out_features], bound, rng),
            bias: Parameter::uniform(join(prefix, "bias"), &[out_features], bound, rng),
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or(NnError::NoForwardCache("linear"))?;
        let (dx, dw, db) = linear_backward(&input, &self.weight.value, grad_output)?;
        accumulate(&mut self.weight.value, &dw);
        accumulate(&mut self.bias.value, &db);
        Ok(dx)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        linear(input, &self.weight.value, Some(&self.bias.value))
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
