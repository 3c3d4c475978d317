use crate::error::{shape_err, NnError, Result};
use crate::layer::Layer;
use crate::param::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of relu; the subgradient at exactly zero is taken as 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    zip_grad("relu", input, grad_output, |x, g| if x > T::zero() { g } else { T::zero() })
}

pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Takes the forward *output*.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    zip_grad("sigmoid", output, grad_output, |y, g| g * y * (T::one() - y))
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Takes the forward *output*.
pub fn tanh_backward<T: Scalar>(output: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    zip_grad("tanh", output, grad_output, |y, g| g * (T::one() - y * y))
}

fn zip_grad<T: Scalar>(op: &'static str, a: &Tensor<T>, g: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() != g.shape() {
        return shape_err(op, format!("{:?} vs gradient {:?}", a.shape(), g.shape()));
    }
    let mut out = Tensor::zeros(a.shape());
    for ((o, &x), &gv) in out.data_mut().iter_mut().zip(a.data()).zip(g.data()) {
        *o = f(x, gv);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Tanh,
}

/// Elementwise activation layer. Relu caches its input, the others their output.
#[derive(Debug, Clone)]
pub struct Activation<T = f32> {
    kind: ActivationKind,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, cache: None }
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu)
    }
}

impl<T: Scalar> Layer<T> for Activation<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.cache = Some(match self.kind {
            ActivationKind::Relu => input.clone(),
            _ => out.clone(),
        });
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let cached = self.cache.take().ok_or(NnError::NoForwardCache("activation"))?;
        match self.kind {
            ActivationKind::Relu => relu_backward(&cached, grad_output),
            ActivationKind::Sigmoid => sigmoid_backward(&cached, grad_output),
            ActivationKind::Tanh => tanh_backward(&cached, grad_output),
        }
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(match self.kind {
            ActivationKind::Relu => relu(input),
            ActivationKind::Sigmoid => sigmoid(input),
            ActivationKind::Tanh => tanh(input),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let x = Tensor::<f64>::zeros(&[1]);
        assert_eq!(sigmoid(&x).data(), &[0.5]);
        assert_eq!(tanh(&x).data(), &[0.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero_matches_finite_difference() {
        let h = 1e-6f64;
        let fd = (sigmoid_scalar(h) - sigmoid_scalar(-h)) / (2.0 * h);
        let y = sigmoid(&Tensor::<f64>::zeros(&[1]));
        let g = sigmoid_backward(&y, &Tensor::full(&[1], 1.0)).unwrap();
        assert_eq!(g.data()[0], 0.25);
        assert!((fd - 0.25).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_is_stable_for_large_magnitudes() {
        assert_eq!(sigmoid_scalar(-1000.0f64), 0.0);
        assert_eq!(sigmoid_scalar(1000.0f64), 1.0);
    }
}
