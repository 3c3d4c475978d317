//! First-order optimizers. State is kept per parameter position, so callers
//! must pass parameters in the same order on every step.

use crate::param::Parameter;
use crate::scalar::Scalar;

pub trait Optimizer<T: Scalar> {
    fn step(&mut self, params: &mut [&mut Parameter<T>]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut [&mut Parameter<T>]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step_size = T::of(c.lr / bc1);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(c.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let (data, grad) = p.value.data_and_grad_mut();
            for k in 0..data.len() {
                let g = grad[k];
                m[k] = b1 * m[k] + one_b1 * g;
                v[k] = b2 * v[k] + one_b2 * g * g;
                data[k] -= step_size * m[k] / (v[k].sqrt() * inv_sqrt_bc2 + eps);
            }
        }
    }
}

/// Plain or momentum SGD.
#[derive(Debug, Clone)]
pub struct Sgd<T = f32> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn step(&mut self, params: &mut [&mut Parameter<T>]) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        let (lr, mu) = (T::of(self.lr), T::of(self.momentum));
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            if !p.trainable {
                continue;
            }
            let (data, grad) = p.value.data_and_grad_mut();
            for k in 0..data.len() {
                vel[k] = mu * vel[k] + grad[k];
                data[k] -= lr * vel[k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param_with_grad(value: f64, grad: f64, n: usize) -> Parameter<f64> {
        let mut p = Parameter::new("p", Tensor::full(&[n], value));
        p.value.grad_mut().iter_mut().for_each(|g| *g = grad);
        p
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = param_with_grad(0.5, 1.0, 4);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        for &v in p.value.data() {
            assert!((v - (0.5 - 1e-3)).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = param_with_grad(0.25, 0.0, 3);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        assert_eq!(p.value.data(), &[0.25; 3]);
        let mut sgd = Sgd::new(0.1, 0.9);
        sgd.step(&mut [&mut p]);
        assert_eq!(p.value.data(), &[0.25; 3]);
    }

    #[test]
    fn replayed_trajectories_match() {
        let run = || {
            let mut p = param_with_grad(1.0, 0.3, 2);
            let mut adam = Adam::new(AdamConfig::default());
            for k in 0..2 {
                p.value.grad_mut().iter_mut().for_each(|g| *g = 0.3 * (k + 1) as f64);
                adam.step(&mut [&mut p]);
            }
            p.value.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut p = param_with_grad(2.0, 1.0, 2);
        p.trainable = false;
        Adam::new(AdamConfig::default()).step(&mut [&mut p]);
        assert_eq!(p.value.data(), &[2.0, 2.0]);
    }
}
