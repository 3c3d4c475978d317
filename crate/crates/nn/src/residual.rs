use rand::Rng;

use crate::activation::{relu, relu_backward};
use crate::conv::Conv2d;
use crate::error::{shape_err, NnError, Result};
use crate::layer::Layer;
use crate::norm::BatchNorm;
use crate::param::{join, Mode, Parameter};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Two-layer residual block: `relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))`.
///
/// The shortcut is the identity, or a strided 1x1 convolution plus batch norm
/// when the block changes resolution or width.
#[derive(Debug, Clone)]
pub struct BasicBlock<T = f32> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm<T>,
    pub downsample: Option<(Conv2d<T>, BatchNorm<T>)>,
    cache: Option<BlockCache<T>>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    mid: Tensor<T>,
    sum: Tensor<T>,
}

impl<T: Scalar> BasicBlock<T> {
    /// Adds a projection shortcut exactly when `stride != 1` or the width changes.
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let project = stride != 1 || in_channels != out_channels;
        Self::with_shortcut(prefix, in_channels, out_channels, stride, project, rng).expect("consistent shortcut")
    }

    pub fn with_shortcut(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        project: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !project && (stride != 1 || in_channels != out_channels) {
            return shape_err(
                "residual_block",
                format!("identity shortcut cannot map {in_channels} channels at stride {stride} to {out_channels}"),
            );
        }
        let conv1 = Conv2d::new(&join(prefix, "conv1"), in_channels, out_channels, 3, stride, 1, false, rng);
        let bn1 = BatchNorm::new(&join(prefix, "bn1"), out_channels);
        let conv2 = Conv2d::new(&join(prefix, "conv2"), out_channels, out_channels, 3, 1, 1, false, rng);
        let bn2 = BatchNorm::new(&join(prefix, "bn2"), out_channels);
        let downsample = project.then(|| {
            (
                Conv2d::new(&join(prefix, "downsample.0"), in_channels, out_channels, 1, stride, 0, false, rng),
                BatchNorm::new(&join(prefix, "downsample.1"), out_channels),
            )
        });
        Ok(Self { conv1, bn1, conv2, bn2, downsample, cache: None })
    }
}

fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return shape_err("residual_block", format!("residual {:?} and shortcut {:?} differ", a.shape(), b.shape()));
    }
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(out)
}

impl<T: Scalar> Layer<T> for BasicBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let a = self.conv1.forward(input, mode)?;
        let a = self.bn1.forward(&a, mode)?;
        let mid = relu(&a);
        let f = self.conv2.forward(&mid, mode)?;
        let f = self.bn2.forward(&f, mode)?;
        let shortcut = match self.downsample.as_mut() {
            Some((conv, bn)) => {
                let s = conv.forward(input, mode)?;
                bn.forward(&s, mode)?
            }
            None => input.clone(),
        };
        let sum = add(&f, &shortcut)?;
        let out = relu(&sum);
        self.cache = Some(BlockCache { mid: a, sum });
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache("residual_block"))?;
        let d_sum = relu_backward(&cache.sum, grad_output)?;
        let d = self.bn2.backward(&d_sum)?;
        let d = self.conv2.backward(&d)?;
        let d = relu_backward(&cache.mid, &d)?;
        let d = self.bn1.backward(&d)?;
        let dx = self.conv1.backward(&d)?;
        let d_short = match self.downsample.as_mut() {
            Some((conv, bn)) => {
                let d = bn.backward(&d_sum)?;
                conv.backward(&d)?
            }
            None => d_sum,
        };
        add(&dx, &d_short)
    }

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.bn1.infer(&self.conv1.infer(input)?)?;
        let f = self.bn2.infer(&self.conv2.infer(&relu(&a))?)?;
        let shortcut = match self.downsample.as_ref() {
            Some((conv, bn)) => bn.infer(&conv.infer(input)?)?,
            None => input.clone(),
        };
        Ok(relu(&add(&f, &shortcut)?))
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.conv1.params();
        v.extend(self.bn1.params());
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        if let Some((c, b)) = self.downsample.as_ref() {
            v.extend(c.params());
            v.extend(b.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        if let Some((c, b)) = self.downsample.as_mut() {
            v.extend(c.params_mut());
            v.extend(b.params_mut());
        }
        v
    }
}
