//! 2-D cross-correlation (the deep-learning "convolution") via im2col + GEMM.

use rand::Rng;

use crate::error::{arg_err, shape_err, NnError, Result};
use crate::layer::Layer;
use crate::param::{join, Mode, Parameter};
use crate::scalar::{gemm, MatMut, MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    batch: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let (batch, in_c, h, w) = input.dims4("conv2d")?;
        let (out_c, wc, kh, kw) = weight.dims4("conv2d")?;
        if wc != in_c {
            return shape_err("conv2d", format!("input has {in_c} channels, kernel expects {wc}"));
        }
        if stride == 0 {
            return arg_err("conv2d", "stride must be >= 1");
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return shape_err("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(Self { batch, in_c, h, w, out_c, kh, kw, stride, pad, oh, ow })
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn spatial_out(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1 stride-1 unpadded convolutions read the input directly.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `ox` whose input column `ox * stride + kj - pad` lies inside the image.
fn valid_cols(g: &Geometry, kj: usize) -> (usize, usize) {
    let lo = if g.pad > kj { (g.pad - kj).div_ceil(g.stride) } else { 0 };
    let hi = if g.w + g.pad > kj { ((g.w + g.pad - kj - 1) / g.stride + 1).min(g.ow) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, col: &mut [T]) {
    let n = g.spatial_out();
    for c in 0..g.in_c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * n..(row + 1) * n];
                let (x0, x1) = valid_cols(g, kj);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..x0].fill(T::zero());
                    line[x1..].fill(T::zero());
                    if x0 == x1 {
                        continue;
                    }
                    let first = x0 * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[x0..x1].copy_from_slice(&src[first..first + (x1 - x0)]);
                    } else {
                        for (v, &s) in line[x0..x1].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geometry, dx: &mut [T]) {
    let n = g.spatial_out();
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * n..(row + 1) * n];
                let (x0, x1) = valid_cols(g, kj);
                if x0 == x1 {
                    continue;
                }
                let first = x0 * g.stride + kj - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let from = &src[oy * g.ow + x0..oy * g.ow + x1];
                    if g.stride == 1 {
                        for (d, &v) in line[first..first + (x1 - x0)].iter_mut().zip(from) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in line[first..].iter_mut().step_by(g.stride).zip(from) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `input` is `B x C x H x W`, `weight` is `O x C x Kh x Kw`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input, weight, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.out_c] {
            return shape_err("conv2d", format!("bias shape {:?}, expected [{}]", b.shape(), g.out_c));
        }
    }
    let n = g.spatial_out();
    let in_plane = g.in_c * g.h * g.w;
    let mut out = Tensor::zeros(&[g.batch, g.out_c, g.oh, g.ow]);
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.patch() * n] };
    let wmat = MatRef::new(weight.data(), g.out_c, g.patch());
    for b in 0..g.batch {
        let x = &input.data()[b * in_plane..(b + 1) * in_plane];
        let rhs = if g.is_pointwise() {
            MatRef::new(x, g.patch(), n)
        } else {
            im2col(x, &g, &mut col);
            MatRef::new(&col, g.patch(), n)
        };
        let dst = &mut out.data_mut()[b * g.out_c * n..(b + 1) * g.out_c * n];
        gemm(T::one(), wmat, rhs, T::zero(), MatMut::new(dst, g.out_c, n));
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                dst[o * n..(o + 1) * n].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_output: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input, weight, stride, padding)?;
    if grad_output.shape() != [g.batch, g.out_c, g.oh, g.ow] {
        return shape_err(
            "conv2d_backward",
            format!("grad shape {:?}, expected {:?}", grad_output.shape(), [g.batch, g.out_c, g.oh, g.ow]),
        );
    }
    let n = g.spatial_out();
    let in_plane = g.in_c * g.h * g.w;
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[g.out_c]);
    let mut col = vec![T::zero(); g.patch() * n];
    let wmat = MatRef::new(weight.data(), g.out_c, g.patch());
    for b in 0..g.batch {
        let x = &input.data()[b * in_plane..(b + 1) * in_plane];
        let dy = &grad_output.data()[b * g.out_c * n..(b + 1) * g.out_c * n];
        for (o, acc) in db.data_mut().iter_mut().enumerate() {
            *acc += dy[o * n..(o + 1) * n].iter().copied().sum::<T>();
        }
        let dymat = MatRef::new(dy, g.out_c, n);
        let dxb = &mut dx.data_mut()[b * in_plane..(b + 1) * in_plane];
        if g.is_pointwise() {
            gemm(T::one(), dymat, MatRef::new(x, g.patch(), n).t(), T::one(), MatMut::new(dw.data_mut(), g.out_c, g.patch()));
            gemm(T::one(), wmat.t(), dymat, T::zero(), MatMut::new(dxb, g.patch(), n));
        } else {
            im2col(x, &g, &mut col);
            gemm(T::one(), dymat, MatRef::new(&col, g.patch(), n).t(), T::one(), MatMut::new(dw.data_mut(), g.out_c, g.patch()));
            gemm(T::one(), wmat.t(), dymat, T::zero(), MatMut::new(&mut col, g.patch(), n));
            col2im(&col, &g, dxb);
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

/// Convolution layer. Bias is optional because a following batch norm makes it redundant.
#[derive(Debug, Clone)]
pub struct Conv2d<T = f32> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-uniform initialization, bound `sqrt(6 / fan_in)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = Parameter::uniform(join(prefix, "weight"), &[out_channels, in_channels, kernel, kernel], bound, rng);
        let bias = with_bias.then(|| Parameter::uniform(join(prefix, "bias"), &[out_channels], 1.0 / (fan_in as f64).sqrt(), rng));
        Self { weight, bias, stride, padding, cache: None }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or(NnError::NoForwardCache("conv2d"))?;
        let grads = conv2d_backward(&input, &self.weight.value, grad_output, self.stride, self.padding)?;
        accumulate(&mut self.weight.value, &grads.weight);
        if let Some(bias) = self.bias.as_mut() {
            accumulate(&mut bias.value, &grads.bias);
        }
        Ok(grads.input)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(input, &self.weight.value, self.bias.as_ref().map(|b| &b.value), self.stride, self.padding)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

pub(crate) fn accumulate<T: Scalar>(target: &mut Tensor<T>, delta: &Tensor<T>) {
    for (g, &d) in target.grad_mut().iter_mut().zip(delta.data()) {
        *g += d;
    }
}
