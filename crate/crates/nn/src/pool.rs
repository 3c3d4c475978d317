//! Max and average pooling.

use crate::error::{arg_err, shape_err, NnError, Result};
use crate::layer::Layer;
use crate::param::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Windowed max pooling over `B x C x H x W`. Returns the output and, for each
/// output element, the flat input index that produced it. Padding never wins;
/// ties go to the first maximal element in row-major window order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, kernel: usize, stride: usize, padding: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (b, c, h, w) = input.dims4("maxpool2d")?;
    if kernel == 0 || stride == 0 {
        return arg_err("maxpool2d", "kernel and stride must be >= 1");
    }
    if padding >= kernel {
        return arg_err("maxpool2d", "padding must be smaller than the kernel");
    }
    if kernel > h + 2 * padding || kernel > w + 2 * padding {
        return shape_err("maxpool2d", format!("kernel {kernel} exceeds input {h}x{w}"));
    }
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let mut argmax = vec![0usize; b * c * oh * ow];
    let x = input.data();
    let y = out.data_mut();
    // Window ranges clipped to the input; padding is skipped rather than compared.
    let clip = |o: usize, n: usize| {
        let lo = (o * stride).saturating_sub(padding);
        let hi = (o * stride + kernel - padding).min(n);
        (lo, hi)
    };
    let rows: Vec<(usize, usize)> = (0..oh).map(|o| clip(o, h)).collect();
    let cols: Vec<(usize, usize)> = (0..ow).map(|o| clip(o, w)).collect();
    for plane in 0..b * c {
        let base = plane * h * w;
        for (oy, &(y0, y1)) in rows.iter().enumerate() {
            for (ox, &(x0, x1)) in cols.iter().enumerate() {
                let mut best_idx = base + y0 * w + x0;
                let mut best = x[best_idx];
                for iy in y0..y1 {
                    let row = base + iy * w;
                    for idx in row + x0..row + x1 {
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                y[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient to its recorded argmax.
pub fn maxpool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != grad_output.len() {
        return shape_err("maxpool2d_backward", "argmax and gradient lengths differ");
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_output.data()) {
        d[i] += g;
    }
    Ok(dx)
}

/// Adaptive max pooling to a 1x1 map: the global spatial max of every channel.
pub fn adaptive_maxpool1x1<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (b, c, h, w) = input.dims4("adaptive_maxpool")?;
    let n = h * w;
    let mut out = Tensor::zeros(&[b, c, 1, 1]);
    let mut argmax = Vec::with_capacity(b * c);
    for (plane, o) in out.data_mut().iter_mut().enumerate() {
        let vals = &input.data()[plane * n..(plane + 1) * n];
        let mut best = 0;
        for (i, v) in vals.iter().enumerate().skip(1) {
            if *v > vals[best] {
                best = i;
            }
        }
        *o = vals[best];
        argmax.push(plane * n + best);
    }
    Ok((out, argmax))
}

/// Global average pooling to `B x C x 1 x 1`.
pub fn global_avgpool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = input.dims4("global_avgpool")?;
    let n = h * w;
    let scale = T::one() / T::of(n as f64);
    let mut out = Tensor::zeros(&[b, c, 1, 1]);
    for (plane, o) in out.data_mut().iter_mut().enumerate() {
        *o = input.data()[plane * n..(plane + 1) * n].iter().copied().sum::<T>() * scale;
    }
    Ok(out)
}

pub fn global_avgpool_backward<T: Scalar>(input_shape: &[usize], grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    let n: usize = input_shape[2..].iter().product();
    if grad_output.len() * n != input_shape.iter().product::<usize>() {
        return shape_err("global_avgpool_backward", "gradient does not match input shape");
    }
    let scale = T::one() / T::of(n as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (plane, &g) in grad_output.data().iter().enumerate() {
        dx.data_mut()[plane * n..(plane + 1) * n].iter_mut().for_each(|v| *v = g * scale);
    }
    Ok(dx)
}

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding, cache: None }
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (out, argmax) = maxpool2d(input, self.kernel, self.stride, self.padding)?;
        self.cache = Some((input.shape().to_vec(), argmax));
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, argmax) = self.cache.take().ok_or(NnError::NoForwardCache("maxpool2d"))?;
        maxpool2d_backward(&shape, &argmax, grad_output)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        maxpool2d(input, self.kernel, self.stride, self.padding).map(|(o, _)| o)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdaptiveMaxPool1x1 {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl AdaptiveMaxPool1x1 {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for AdaptiveMaxPool1x1 {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (out, argmax) = adaptive_maxpool1x1(input)?;
        self.cache = Some((input.shape().to_vec(), argmax));
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, argmax) = self.cache.take().ok_or(NnError::NoForwardCache("adaptive_maxpool"))?;
        maxpool2d_backward(&shape, &argmax, grad_output)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        adaptive_maxpool1x1(input).map(|(o, _)| o)
    }
}

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.input_shape = Some(input.shape().to_vec());
        global_avgpool(input)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.take().ok_or(NnError::NoForwardCache("global_avgpool"))?;
        global_avgpool_backward(&shape, grad_output)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        global_avgpool(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_window_takes_the_max() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2d(&x, 2, 2, 0).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn ties_route_gradient_to_first_element() {
        let x = Tensor::<f64>::full(&[1, 1, 2, 2], 5.0);
        let (_, idx) = maxpool2d(&x, 2, 2, 0).unwrap();
        let g = Tensor::<f64>::full(&[1, 1, 1, 1], 1.0);
        let dx = maxpool2d_backward(x.shape(), &idx, &g).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn adaptive_is_per_channel_global_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 5], |_| rng.random_range(-3.0..3.0));
        let (y, _) = adaptive_maxpool1x1(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 1, 1]);
        for plane in 0..6 {
            let m = x.data()[plane * 20..(plane + 1) * 20].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(y.data()[plane], m);
        }
    }

    #[test]
    fn matches_window_oracle_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::from_fn(&[2, 2, 7, 6], |_| rng.random_range(-1.0..1.0));
        let (y, _) = maxpool2d(&x, 3, 2, 1).unwrap();
        let (oh, ow) = ((7 + 2 - 3) / 2 + 1, (6 + 2 - 3) / 2 + 1);
        assert_eq!(y.shape(), &[2, 2, oh, ow]);
        for p in 0..4 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for iy in (oy * 2).saturating_sub(1)..(oy * 2 + 2).min(7) {
                        for ix in (ox * 2).saturating_sub(1)..(ox * 2 + 2).min(6) {
                            m = m.max(x.data()[p * 42 + iy * 6 + ix]);
                        }
                    }
                    assert_eq!(y.data()[(p * oh + oy) * ow + ox], m);
                }
            }
        }
    }

    #[test]
    fn rejects_kernel_larger_than_input() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(maxpool2d(&x, 3, 1, 0).is_err());
    }
}
