//! Batch normalization over the channel axis of `B x C` or `B x C x H x W` inputs.

use crate::conv::accumulate;
use crate::error::{arg_err, shape_err, NnError, Result};
use crate::layer::Layer;
use crate::param::{join, Mode, Parameter};
use crate::scalar::{lane_dot, lane_sq_dev, lane_sum, Scalar};
use crate::tensor::Tensor;

/// `(batch, channels, spatial)` view of a rank-2 or rank-4 input.
fn layout<T: Scalar>(input: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match input.shape() {
        [b, c] => Ok((*b, *c, 1)),
        [b, c, h, w] => Ok((*b, *c, h * w)),
        s => shape_err("batch_norm", format!("expected rank 2 or 4, got {:?}", s)),
    }
}

/// Per-channel values needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
    batch_stats: bool,
}

/// Output, cache, and the batch mean / biased variance used.
pub struct BatchNormTrainOutput<T> {
    pub output: Tensor<T>,
    pub cache: BatchNormCache<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn check_affine<T: Scalar>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<()> {
    if eps <= 0.0 {
        return arg_err("batch_norm", format!("eps must be positive, got {eps}"));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return shape_err("batch_norm", format!("affine parameters must have shape [{c}]"));
    }
    Ok(())
}

fn normalize<T: Scalar>(input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, mean: &[T], inv_std: &[T]) -> Result<(Tensor<T>, Vec<T>)> {
    let (b, c, s) = layout(input)?;
    let mut out = vec![T::zero(); input.len()];
    let mut xhat = vec![T::zero(); input.len()];
    let x = input.data();
    for bi in 0..b {
        for ci in 0..c {
            let range = (bi * c + ci) * s..(bi * c + ci + 1) * s;
            let (g, bt, m, is) = (gamma.data()[ci], beta.data()[ci], mean[ci], inv_std[ci]);
            for ((o, xh), &v) in out[range.clone()].iter_mut().zip(&mut xhat[range.clone()]).zip(&x[range]) {
                *xh = (v - m) * is;
                *o = g * *xh + bt;
            }
        }
    }
    Ok((Tensor::from_vec(input.shape(), out)?, xhat))
}

/// Training-mode normalization with batch statistics.
pub fn batch_norm_train<T: Scalar>(input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<BatchNormTrainOutput<T>> {
    let (b, c, s) = layout(input)?;
    check_affine(c, gamma, beta, eps)?;
    let n = T::of((b * s) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ci in 0..c {
        let mut sum = T::zero();
        for bi in 0..b {
            let start = (bi * c + ci) * s;
            sum += lane_sum(&input.data()[start..start + s]);
        }
        let m = sum / n;
        let mut sq = T::zero();
        for bi in 0..b {
            let start = (bi * c + ci) * s;
            sq += lane_sq_dev(&input.data()[start..start + s], m);
        }
        mean[ci] = m;
        var[ci] = sq / n;
    }
    let eps_t = T::of(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
    let (output, xhat) = normalize(input, gamma, beta, &mean, &inv_std)?;
    Ok(BatchNormTrainOutput {
        output,
        cache: BatchNormCache { xhat, inv_std, shape: input.shape().to_vec(), batch_stats: true },
        mean,
        var,
    })
}

/// Evaluation-mode normalization with running statistics.
pub fn batch_norm_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (_, c, _) = layout(input)?;
    check_affine(c, gamma, beta, eps)?;
    let eps_t = T::of(eps);
    let inv_std: Vec<T> = running_var.data().iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
    let (out, xhat) = normalize(input, gamma, beta, running_mean.data(), &inv_std)?;
    Ok((out, BatchNormCache { xhat, inv_std, shape: input.shape().to_vec(), batch_stats: false }))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if grad_output.shape() != cache.shape.as_slice() {
        return shape_err("batch_norm_backward", "gradient shape differs from input");
    }
    let (b, c, s) = layout(grad_output)?;
    let n = T::of((b * s) as f64);
    let dy = grad_output.data();
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut dx = vec![T::zero(); dy.len()];
    for ci in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for bi in 0..b {
            let range = (bi * c + ci) * s..(bi * c + ci + 1) * s;
            sum_dy += lane_sum(&dy[range.clone()]);
            sum_dy_xhat += lane_dot(&dy[range.clone()], &cache.xhat[range]);
        }
        dgamma.data_mut()[ci] = sum_dy_xhat;
        dbeta.data_mut()[ci] = sum_dy;
        let g = gamma.data()[ci];
        let is = cache.inv_std[ci];
        let scale = g * is / n;
        for bi in 0..b {
            let range = (bi * c + ci) * s..(bi * c + ci + 1) * s;
            let out = dx[range.clone()].iter_mut().zip(&dy[range.clone()]).zip(&cache.xhat[range]);
            if cache.batch_stats {
                for ((d, &g_out), &xh) in out {
                    *d = scale * (n * g_out - sum_dy - xh * sum_dy_xhat);
                }
            } else {
                for ((d, &g_out), _) in out {
                    *d = g * is * g_out;
                }
            }
        }
    }
    Ok((Tensor::from_vec(&cache.shape, dx)?, dgamma, dbeta))
}

/// Batch-norm layer with learnable scale/shift and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm<T = f32> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Parameter<T>,
    pub running_var: Parameter<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self::with_config(prefix, channels, 0.1, 1e-5).expect("default eps is positive")
    }

    pub fn with_config(prefix: &str, channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        if eps <= 0.0 {
            return arg_err("batch_norm", format!("eps must be positive, got {eps}"));
        }
        Ok(Self {
            gamma: Parameter::new(join(prefix, "weight"), Tensor::full(&[channels], T::one())),
            beta: Parameter::new(join(prefix, "bias"), Tensor::zeros(&[channels])),
            running_mean: Parameter::buffer(join(prefix, "running_mean"), Tensor::zeros(&[channels])),
            running_var: Parameter::buffer(join(prefix, "running_var"), Tensor::full(&[channels], T::one())),
            momentum,
            eps,
            cache: None,
        })
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => {
                let (b, _, s) = layout(input)?;
                let out = batch_norm_train(input, &self.gamma.value, &self.beta.value, self.eps)?;
                let n = (b * s) as f64;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let m = T::of(self.momentum);
                let keep = T::one() - m;
                for (r, &v) in self.running_mean.value.data_mut().iter_mut().zip(&out.mean) {
                    *r = keep * *r + m * v;
                }
                for (r, &v) in self.running_var.value.data_mut().iter_mut().zip(&out.var) {
                    *r = keep * *r + m * v * T::of(unbias);
                }
                self.cache = Some(out.cache);
                Ok(out.output)
            }
            Mode::Eval => {
                let (out, cache) = batch_norm_eval(
                    input,
                    &self.gamma.value,
                    &self.beta.value,
                    &self.running_mean.value,
                    &self.running_var.value,
                    self.eps,
                )?;
                self.cache = Some(cache);
                Ok(out)
            }
        }
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache("batch_norm"))?;
        let (dx, dg, db) = batch_norm_backward(&cache, &self.gamma.value, grad_output)?;
        accumulate(&mut self.gamma.value, &dg);
        accumulate(&mut self.beta.value, &db);
        Ok(dx)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        batch_norm_eval(input, &self.gamma.value, &self.beta.value, &self.running_mean.value, &self.running_var.value, self.eps)
            .map(|(o, _)| o)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::<f64>::full(&[4, 2, 3, 3], 7.5);
        let gamma = Tensor::from_vec(&[2], vec![2.0, -1.0]).unwrap();
        let beta = Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        let out = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap().output;
        for (i, v) in out.data().iter().enumerate() {
            let c = (i / 9) % 2;
            assert!((v - beta.data()[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_is_already_standard() {
        let x = Tensor::<f64>::from_vec(&[2, 1], vec![-1.0, 1.0]).unwrap();
        let out = batch_norm_train(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), 1e-5).unwrap().output;
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((out.data()[0] + expect).abs() < 1e-12);
        assert!((out.data()[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::<f64>::new("bn", 1);
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        // mean 2, unbiased variance 2
        assert!((bn.running_mean.value.data()[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var.value.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
        let y = bn.infer(&x).unwrap();
        let y2 = bn.infer(&x).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn non_positive_eps_is_rejected() {
        assert!(BatchNorm::<f32>::with_config("bn", 3, 0.1, 0.0).is_err());
        let x = Tensor::<f64>::zeros(&[2, 1]);
        assert!(batch_norm_train(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), -1.0).is_err());
    }
}
