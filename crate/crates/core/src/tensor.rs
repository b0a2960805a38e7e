//! Dense n-dimensional float tensors.
//!
//! Data is stored row-major. Training runs in f32; gradient checking
//! instantiates the same code at f64, so everything is generic over
//! [`Scalar`].

use crate::error::{Error, Result};
use rayon::prelude::*;
use std::iter::Sum;

/// Element dtype tag, as written to the checkpoint container.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    pub fn from_tag(tag: u8) -> Option<Dtype> {
        match tag {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Float element type of a tensor. Implemented for f32 and f64.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + Sum
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    const DTYPE: Dtype;
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    /// General matrix multiply C = alpha * A B + beta * C with explicit strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major n-dimensional float array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
    /// Whether this tensor participates in gradient computation.
    pub requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} expects {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); n],
            requires_grad: false,
        }
    }

    pub fn filled(shape: Vec<usize>, value: S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
        }
    }

    pub fn requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Number of rows when viewed as a 2-d matrix [rows, cols].
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Elements per leading row (product of trailing dims).
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.as_f64()).collect(),
            requires_grad: self.requires_grad,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::from_f64(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    pub fn scale(&mut self, s: S) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "add_assign {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    /// Sum of squares, accumulated in f64.
    pub fn sq_norm_f64(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum()
    }

    /// Error if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for x in &self.data {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("{context}: {x}")));
            }
        }
        Ok(())
    }

    /// Matrix product viewing both operands as 2-d, with optional transposes.
    ///
    /// `self` is [m, k] (or [k, m] when `ta`), `b` is [k, n] (or [n, k] when
    /// `tb`). Transposed operands are materialized first so the hot GEMM path
    /// always runs on contiguous row-major buffers, split over row blocks.
    pub fn matmul(&self, ta: bool, b: &Tensor<S>, tb: bool) -> Result<Tensor<S>> {
        let a2 = self.as_2d();
        let b2 = b.as_2d();
        let (am, ak) = if ta { (a2.1, a2.0) } else { a2 };
        let (bk, bn) = if tb { (b2.1, b2.0) } else { b2 };
        if ak != bk {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dims {ak} vs {bk} (a {:?} ta={ta}, b {:?} tb={tb})",
                self.shape, b.shape
            )));
        }
        let a_mat;
        let a_ref = if ta {
            a_mat = transpose(&self.data, a2.0, a2.1);
            &a_mat
        } else {
            &self.data
        };
        let b_mat;
        let b_ref = if tb {
            b_mat = transpose(&b.data, b2.0, b2.1);
            &b_mat
        } else {
            &b.data
        };
        let mut out = vec![S::zero(); am * bn];
        gemm_rowmajor(am, ak, bn, a_ref, b_ref, &mut out);
        Tensor::new(vec![am, bn], out)
    }

    fn as_2d(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (0, 0),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }
}

fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut t = vec![S::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// GEMM on contiguous row-major slices, parallelized over row blocks.
///
/// Each output row depends only on the matching row of `a` and on all of `b`,
/// so splitting rows across threads is bit-deterministic.
pub fn gemm_rowmajor<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let work = m * k * n;
    let threads = rayon::current_num_threads();
    if threads > 1 && work >= (1 << 20) && m >= 2 * threads {
        let rows_per = m.div_ceil(threads);
        out.par_chunks_mut(rows_per * n)
            .zip(a.par_chunks(rows_per * k))
            .for_each(|(oc, ac)| {
                let mr = ac.len() / k;
                unsafe {
                    S::gemm(
                        mr,
                        k,
                        n,
                        S::one(),
                        ac.as_ptr(),
                        k as isize,
                        1,
                        b.as_ptr(),
                        n as isize,
                        1,
                        S::zero(),
                        oc.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            });
    } else {
        unsafe {
            S::gemm(
                m,
                k,
                n,
                S::one(),
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                S::zero(),
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}
