//! Dense row-major matrices and the matrix products the networks need.
//!
//! Products are dispatched to `matrixmultiply`'s packed GEMM kernels; everything
//! else (shapes, reductions, the column-factored input form) lives here.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Scalar type the networks are generic over: `f32` for training and
/// storage, `f64` for finite-difference reference checks.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    /// `C <- alpha * A B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices, with `C` not aliasing `A` or `B`.
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

    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    fn of(v: f64) -> f32 {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
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

impl Real for f64 {
    fn of(v: f64) -> f64 {
        v as f64
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
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

/// Dot product with 32 independent accumulators so the loop vectorizes.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 32;
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    // Pairwise fold keeps the reduction order fixed.
    let mut w = LANES;
    while w > 1 {
        w /= 2;
        for l in 0..w {
            acc[l] = acc[l] + acc[l + w];
        }
    }
    acc[0] + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// `self * other^T` for row-major `self: n x k`, `other: m x k`.
    pub fn mul_t(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.cols, "inner dimensions");
        let mut out = Matrix::zeros(self.rows, other.rows);
        if self.rows == 0 || other.rows == 0 {
            return out;
        }
        // SAFETY: shapes checked above; `out` is a fresh allocation.
        unsafe {
            T::gemm(
                self.rows,
                self.cols,
                other.rows,
                T::one(),
                self.data.as_ptr(),
                self.cols as isize,
                1,
                other.data.as_ptr(),
                1,
                other.cols as isize,
                T::zero(),
                out.data.as_mut_ptr(),
                out.cols as isize,
                1,
            );
        }
        out
    }

    /// `self * other` for `self: n x m`, `other: m x k`.
    pub fn mul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows, "inner dimensions");
        let mut out = Matrix::zeros(self.rows, other.cols);
        if self.rows == 0 || other.cols == 0 {
            return out;
        }
        // SAFETY: shapes checked above; `out` is a fresh allocation.
        unsafe {
            T::gemm(
                self.rows,
                self.cols,
                other.cols,
                T::one(),
                self.data.as_ptr(),
                self.cols as isize,
                1,
                other.data.as_ptr(),
                other.cols as isize,
                1,
                T::zero(),
                out.data.as_mut_ptr(),
                out.cols as isize,
                1,
            );
        }
        out
    }

    /// `self^T * other` for `self: n x m`, `other: n x k`, written into `out: m x k`
    /// with column stride `out_cs` (lets callers scatter into a wider matrix).
    pub(crate) fn t_mul_into(
        &self,
        other: &Matrix<T>,
        out: &mut [T],
        out_rs: usize,
        out_cs: usize,
    ) {
        assert_eq!(self.rows, other.rows, "inner dimensions");
        if self.cols == 0 || other.cols == 0 {
            return;
        }
        assert!(out.len() > (self.cols - 1) * out_rs + (other.cols - 1) * out_cs);
        // SAFETY: bounds asserted above; `out` is disjoint from the inputs.
        unsafe {
            T::gemm(
                self.cols,
                self.rows,
                other.cols,
                T::one(),
                self.data.as_ptr(),
                1,
                self.cols as isize,
                other.data.as_ptr(),
                other.cols as isize,
                1,
                T::zero(),
                out.as_mut_ptr(),
                out_rs as isize,
                out_cs as isize,
            );
        }
    }

    /// `self^T * other`.
    pub fn t_mul(&self, other: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, other.cols);
        let cols = out.cols;
        self.t_mul_into(other, &mut out.data, cols, 1);
        out
    }

    /// Column sums accumulated in f64.
    pub fn col_sums(&self) -> Vec<T> {
        let mut acc = vec![0.0f64; self.cols];
        for i in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += v.as_f64();
            }
        }
        acc.into_iter().map(T::of).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A batch whose columns split into ones shared by every row and ones that vary.
///
/// Observations carry a static terrain map, so most of a minibatch is the same
/// value down each column. Holding only the varying part lets the first layer
/// fold the shared part into a per-batch bias without changing the math.
#[derive(Debug, Clone, PartialEq)]
pub struct Factored<T> {
    pub cols: usize,
    pub shared_idx: Vec<usize>,
    pub shared_val: Vec<T>,
    pub var_idx: Vec<usize>,
    /// `rows x var_idx.len()`.
    pub var: Matrix<T>,
}

impl<T: Real> Factored<T> {
    pub fn rows(&self) -> usize {
        self.var.rows
    }

    /// Splits a dense batch, treating a column as shared when every row
    /// carries the bit-identical value of row 0.
    pub fn from_dense(m: &Matrix<T>) -> Self {
        let mut shared_idx = Vec::new();
        let mut shared_val = Vec::new();
        let mut var_idx = Vec::new();
        for j in 0..m.cols {
            let first = if m.rows > 0 { m.get(0, j) } else { T::zero() };
            let constant = (1..m.rows).all(|i| same_value(m.get(i, j), first));
            if constant && m.rows > 0 {
                shared_idx.push(j);
                shared_val.push(first);
            } else {
                var_idx.push(j);
            }
        }
        let mut var = Matrix::zeros(m.rows, var_idx.len());
        for i in 0..m.rows {
            let src = m.row(i);
            for (dst, &j) in var.row_mut(i).iter_mut().zip(&var_idx) {
                *dst = src[j];
            }
        }
        Factored {
            cols: m.cols,
            shared_idx,
            shared_val,
            var_idx,
            var,
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows(), self.cols);
        for i in 0..self.rows() {
            let row = out.row_mut(i);
            for (&j, &v) in self.shared_idx.iter().zip(&self.shared_val) {
                row[j] = v;
            }
            for (&j, &v) in self.var_idx.iter().zip(self.var.row(i)) {
                row[j] = v;
            }
        }
        out
    }

    pub fn row_dense(&self, i: usize) -> Vec<T> {
        let mut row = vec![T::zero(); self.cols];
        for (&j, &v) in self.shared_idx.iter().zip(&self.shared_val) {
            row[j] = v;
        }
        for (&j, &v) in self.var_idx.iter().zip(self.var.row(i)) {
            row[j] = v;
        }
        row
    }
}

// Equality plus a sign check separates +0 from -0, as a bit comparison would.
fn same_value<T: Real>(a: T, b: T) -> bool {
    a == b && a.is_sign_negative() == b.is_sign_negative()
}

/// Network input: an ordinary dense batch or a column-factored one.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a, T> {
    Dense(&'a Matrix<T>),
    Factored(&'a Factored<T>),
}

impl<T: Real> Input<'_, T> {
    pub fn rows(&self) -> usize {
        match self {
            Input::Dense(m) => m.rows,
            Input::Factored(f) => f.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Input::Dense(m) => m.cols,
            Input::Factored(f) => f.cols,
        }
    }
}

impl<'a, T> From<&'a Matrix<T>> for Input<'a, T> {
    fn from(m: &'a Matrix<T>) -> Self {
        Input::Dense(m)
    }
}

impl<'a, T> From<&'a Factored<T>> for Input<'a, T> {
    fn from(f: &'a Factored<T>) -> Self {
        Input::Factored(f)
    }
}
