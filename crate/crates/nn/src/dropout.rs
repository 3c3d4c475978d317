use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, shape_err, NnError, Result};
use crate::layer::Layer;
use crate::param::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inverted dropout. In training mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; the returned mask holds
/// those per-element multipliers. Evaluation mode is the identity.
pub fn dropout<T: Scalar>(input: &Tensor<T>, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return arg_err("dropout", format!("rate must be in [0, 1), got {rate}"));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
    let mut out = input.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
        *o *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&[T]>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    let Some(mask) = mask else {
        return Ok(grad_output.clone());
    };
    if mask.len() != grad_output.len() {
        return shape_err("dropout_backward", "mask and gradient lengths differ");
    }
    let mut dx = grad_output.clone();
    for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
        *d *= m;
    }
    Ok(dx)
}

/// Dropout layer owning a seeded generator, so a given seed replays the same
/// sequence of masks.
#[derive(Debug, Clone)]
pub struct Dropout<T = f32> {
    pub rate: f64,
    rng: ChaCha8Rng,
    cache: Option<Option<Vec<T>>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return arg_err("dropout", format!("rate must be in [0, 1), got {rate}"));
        }
        Ok(Self { rate, rng: ChaCha8Rng::seed_from_u64(seed), cache: None })
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, mask) = dropout(input, self.rate, mode, &mut self.rng)?;
        self.cache = Some(mask);
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.cache.take().ok_or(NnError::NoForwardCache("dropout"))?;
        dropout_backward(mask.as_deref(), grad_output)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(input.clone())
    }
}
