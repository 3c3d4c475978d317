//! Dense row-major tensors with an optional gradient slot.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n], grad: None }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err("tensor", format!("shape {:?} needs {} elements, got {}", shape, n, data.len()));
        }
        if shape.iter().any(|&d| d == 0) {
            return shape_err("tensor", format!("zero dimension in {:?}", shape));
        }
        Ok(Self { shape: shape.to_vec(), data, grad: None })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect(), grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    /// Split borrow of values and (allocated) gradient.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], &mut [T]) {
        let n = self.data.len();
        let grad = self.grad.get_or_insert_with(|| vec![T::zero(); n]);
        (&mut self.data, grad)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return shape_err("reshape", format!("{:?} -> {:?} changes element count", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(B, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => shape_err(op, format!("expected rank-4 tensor, got {:?}", self.shape)),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => shape_err(op, format!("expected rank-2 tensor, got {:?}", self.shape)),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect(), grad: None }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Elementwise conversion to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect(), grad: None }
    }

    /// Concatenate rank-2 tensors along the feature axis.
    pub fn concat_cols(parts: &[&Tensor<T>]) -> Result<Self> {
        let rows = match parts.first() {
            Some(p) => p.dims2("concat")?.0,
            None => return shape_err("concat", "no inputs"),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.dims2("concat")?;
            if r != rows {
                return shape_err("concat", format!("row counts {} and {}", rows, r));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        Tensor::from_vec(&[rows, total], data)
    }

    /// Inverse of [`concat_cols`](Self::concat_cols).
    pub fn split_cols(&self, widths: &[usize]) -> Result<Vec<Self>> {
        let (rows, cols) = self.dims2("split")?;
        if widths.iter().sum::<usize>() != cols {
            return shape_err("split", format!("widths {:?} do not sum to {}", widths, cols));
        }
        let mut out: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
        for r in 0..rows {
            let mut start = r * cols;
            for (buf, &w) in out.iter_mut().zip(widths) {
                buf.extend_from_slice(&self.data[start..start + w]);
                start += w;
            }
        }
        out.into_iter().zip(widths).map(|(d, &w)| Tensor::from_vec(&[rows, w], d)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
    }

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[3, 4], |i| -(i as f64));
        let c = Tensor::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[3, 6]);
        assert_eq!(&c.data()[..6], &[0.0, 1.0, -0.0, -1.0, -2.0, -3.0]);
        let parts = c.split_cols(&[2, 4]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn grad_is_lazily_allocated() {
        let mut t = Tensor::<f32>::zeros(&[4]);
        assert!(t.grad().is_none());
        t.grad_mut()[1] = 2.0;
        assert_eq!(t.grad().unwrap(), &[0.0, 2.0, 0.0, 0.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0; 4]);
    }
}
