use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Whether a forward pass is part of training (batch statistics, active dropout)
/// or evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named tensor owned by a layer. Names are dotted paths such as
/// `resnet.layer1.0.conv1.weight` and are unique within a model.
#[derive(Clone, Debug)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    /// Non-trainable parameters (batch-norm running statistics) are serialized
    /// but never touched by optimizers.
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self { name: name.into(), value, trainable: true }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self { name: name.into(), value, trainable: false }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let value = Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)));
        Self::new(name, value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
