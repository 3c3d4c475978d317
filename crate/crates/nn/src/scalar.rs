//! Floating-point element types and the matrix-multiply kernel.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of a [`Tensor`](crate::Tensor). Implemented for `f32` (training)
/// and `f64` (gradient checking).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + DivAssign + Sum + 'static
{
    /// Raw general matrix multiply, `C = alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing (for C) storage of the
    /// given dimensions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided read-only view of a matrix stored in a slice.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Dense row-major matrix.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    /// Column block `[start, start + cols)` of a row-major matrix with `ld` columns.
    pub fn columns(data: &'a [T], rows: usize, ld: usize, start: usize, cols: usize) -> Self {
        Self { data: &data[start.min(data.len())..], rows, cols, row_stride: ld, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, row_stride: self.col_stride, col_stride: self.row_stride }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride + 1
        }
    }
}

/// Strided mutable view of a matrix.
#[derive(Debug)]
pub struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatMut<'a, T> {
    pub fn new(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    pub fn columns(data: &'a mut [T], rows: usize, ld: usize, start: usize, cols: usize) -> Self {
        let start = start.min(data.len());
        Self { data: &mut data[start..], rows, cols, row_stride: ld, col_stride: 1 }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride + 1
        }
    }
}

/// `c = alpha * a * b + beta * c`. Panics on inconsistent dimensions.
pub fn gemm<T: Scalar>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: MatMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    assert!(a.span() <= a.data.len(), "gemm lhs out of bounds");
    assert!(b.span() <= b.data.len(), "gemm rhs out of bounds");
    assert!(c.span() <= c.data.len(), "gemm output out of bounds");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: spans were checked against the slice lengths above, and `c` is a
    // unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.data.as_mut_ptr(),
            c.row_stride as isize,
            c.col_stride as isize,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_loops_with_transposes_and_column_blocks() {
        let a: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect(); // 3x4
        let b: Vec<f64> = (0..20).map(|v| (v as f64).sin()).collect(); // 4x5
        let mut c = vec![1.0; 15];
        gemm(2.0, MatRef::new(&a, 3, 4), MatRef::new(&b, 4, 5), 1.0, MatMut::new(&mut c, 3, 5));
        for i in 0..3 {
            for j in 0..5 {
                let s: f64 = (0..4).map(|p| a[i * 4 + p] * b[p * 5 + j]).sum();
                assert!((c[i * 5 + j] - (1.0 + 2.0 * s)).abs() < 1e-12);
            }
        }
        // a^T (4x3) times the first two columns of c^T... use a column block of b instead
        let mut d = vec![0.0; 4 * 2];
        gemm(1.0, MatRef::new(&a, 3, 4).t(), MatRef::columns(&b[..15], 3, 5, 1, 2), 0.0, MatMut::new(&mut d, 4, 2));
        for i in 0..4 {
            for j in 0..2 {
                let s: f64 = (0..3).map(|p| a[p * 4 + i] * b[p * 5 + 1 + j]).sum();
                assert!((d[i * 2 + j] - s).abs() < 1e-12);
            }
        }
    }
}

const LANES: usize = 8;

/// Sum with eight independent accumulators so the loop vectorizes.
pub(crate) fn lane_sum<T: Scalar>(xs: &[T]) -> T {
    lane_fold(xs, xs, |a, _| a)
}

/// `sum(a[i] * b[i])` with eight independent accumulators.
pub(crate) fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    lane_fold(a, b, |x, y| x * y)
}

/// `sum((x - m)^2)` with eight independent accumulators.
pub(crate) fn lane_sq_dev<T: Scalar>(xs: &[T], m: T) -> T {
    lane_fold(xs, xs, |x, _| (x - m) * (x - m))
}

#[inline(always)]
fn lane_fold<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += f(x[l], y[l]);
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += f(x, y);
    }
    acc.iter().fold(tail, |s, &v| s + v)
}
