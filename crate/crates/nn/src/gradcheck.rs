//! Central finite-difference checks of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Compares the analytic gradient returned by `op` against central differences.
///
/// `op` maps an input to `(scalar value, gradient of the value w.r.t. the input)`.
/// Returns `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)`.
pub fn gradient_check<F>(input: &Tensor<f64>, step: f64, mut op: F) -> f64
where
    F: FnMut(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let (_, analytic) = op(input);
    assert_eq!(analytic.shape(), input.shape(), "gradient shape must match input");
    let mut probe = input.clone();
    let mut worst = 0.0f64;
    for i in 0..input.len() {
        let x0 = input.data()[i];
        probe.data_mut()[i] = x0 + step;
        let (plus, _) = op(&probe);
        probe.data_mut()[i] = x0 - step;
        let (minus, _) = op(&probe);
        probe.data_mut()[i] = x0;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Fixed random weights for reducing an output to a scalar. A plain sum is
/// blind to operations whose outputs sum to a constant (softmax, batch norm).
pub fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `sum(w * y)`; its gradient with respect to `y` is `w`.
pub fn project(output: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    output.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_a_cubic_passes() {
        let x = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let err = gradient_check(&x, 1e-5, |t| {
            let v = t.data().iter().map(|a| a * a * a).sum();
            (v, t.map(|a| 3.0 * a * a))
        });
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let err = gradient_check(&x, 1e-5, |t| (t.sum(), t.map(|_| 2.0)));
        assert!(err > 0.4);
    }
}
