//! Dense row-major tensors over [`Scalar`] fields, with pairwise contraction
//! and index permutation.
//!
//! Every index of a tensor has an extent of at least one and the data vector
//! holds exactly the product of the extents, so an order-0 tensor carries a
//! single value. Tensors are plain values: every operation returns a new
//! tensor and leaves its inputs untouched.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{Scalar, Strided, StridedMut};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape(format!("zero extent in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let mut out = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for v in out.data.iter_mut() {
            *v = f(&idx);
            increment(&mut idx, shape);
        }
        out
    }

    /// Entries drawn uniformly from `[-0.5, 0.5]` (both parts for complex).
    pub fn random<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let complex = T::KIND == crate::ScalarKind::Complex;
        Self::from_fn(shape, |_| {
            let re = rng.random::<f64>() - 0.5;
            let im = if complex { rng.random::<f64>() - 0.5 } else { 0.0 };
            T::from_complex(Complex64::new(re, im)).expect("real part only")
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
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

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: T) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.order(), "index arity");
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| {
                assert!(i < e, "index {i} out of extent {e}");
                acc * e + i
            })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, x: f64) -> Self {
        self.map(|v| v.scale(x))
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ExtentMismatch(format!(
                "axpy {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Hermitian inner product `sum conj(self) * other`.
    pub fn inner(&self, other: &Tensor<T>) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::ExtentMismatch(format!(
                "inner {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.conj() * b)
            .sum())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.abs_sq()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }
}

pub fn frobenius_norm<T: Scalar>(t: &Tensor<T>) -> f64 {
    // scaled accumulation so that huge or tiny entries neither overflow nor flush
    let amax = t.data.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if amax == 0.0 || !amax.is_finite() {
        return amax;
    }
    let inv = 1.0 / amax;
    let sum: f64 = t.data.iter().map(|v| (v.abs() * inv).powi(2)).sum();
    amax * sum.sqrt()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[inline]
fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Reorders the indices of `a`: index `k` of the result is index `perm[k]` of `a`.
pub fn permute<T: Scalar>(a: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let order = a.order();
    let mut seen = vec![false; order];
    if perm.len() != order || perm.iter().any(|&p| p >= order || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::InvalidPermutation(perm.to_vec()));
    }
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return Ok(a.clone());
    }
    let in_strides = a.strides();
    let shape: Vec<usize> = perm.iter().map(|&p| a.shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();

    let mut data = Vec::with_capacity(a.len());
    let mut idx = vec![0usize; order];
    let mut off = 0usize;
    let last = order - 1;
    loop {
        // innermost index runs as a strided gather
        let (n, s) = (shape[last], step[last]);
        data.extend((0..n).map(|i| a.data[off + i * s]));
        let mut k = last;
        loop {
            if k == 0 {
                return Ok(Tensor { shape, data });
            }
            k -= 1;
            idx[k] += 1;
            off += step[k];
            if idx[k] < shape[k] {
                break;
            }
            off -= step[k] * shape[k];
            idx[k] = 0;
        }
    }
}

/// Contracts `a` with `b` over the index pairs `(index of a, index of b)`.
///
/// The free indices of `a` come first in the result, followed by the free
/// indices of `b`, each in their original relative order. An empty pair list
/// yields the outer product.
pub fn contract<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, pairs: &[(usize, usize)]) -> Result<Tensor<T>> {
    let mut used_a = vec![false; a.order()];
    let mut used_b = vec![false; b.order()];
    for &(ia, ib) in pairs {
        if ia >= a.order() {
            return Err(Error::IndexOutOfRange {
                index: ia,
                order: a.order(),
            });
        }
        if ib >= b.order() {
            return Err(Error::IndexOutOfRange {
                index: ib,
                order: b.order(),
            });
        }
        if used_a[ia] || used_b[ib] {
            return Err(Error::InvalidArgument(format!("repeated index in pairs {pairs:?}")));
        }
        used_a[ia] = true;
        used_b[ib] = true;
        if a.shape[ia] != b.shape[ib] {
            return Err(Error::ExtentMismatch(format!(
                "index {ia} of a has extent {} but index {ib} of b has {}",
                a.shape[ia], b.shape[ib]
            )));
        }
    }
    let free_a: Vec<usize> = (0..a.order()).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..b.order()).filter(|&i| !used_b[i]).collect();

    let perm_a: Vec<usize> = free_a.iter().copied().chain(pairs.iter().map(|p| p.0)).collect();
    let perm_b: Vec<usize> = pairs.iter().map(|p| p.1).chain(free_b.iter().copied()).collect();
    let pa = permute(a, &perm_a)?;
    let pb = permute(b, &perm_b)?;

    let m: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let k: usize = pairs.iter().map(|p| a.shape[p.0]).product();
    let n: usize = free_b.iter().map(|&i| b.shape[i]).product();

    let mut c = vec![T::zero(); m * n];
    matmul(&pa.data, &pb.data, &mut c, m, k, n);

    let shape = free_a
        .iter()
        .map(|&i| a.shape[i])
        .chain(free_b.iter().map(|&i| b.shape[i]))
        .collect();
    Ok(Tensor { shape, data: c })
}

/// `c += a * b` for row-major `a: m x k`, `b: k x n`, `c: m x n`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    T::gemm(m, k, n, Strided::row_major(a, k), Strided::row_major(b, n), StridedMut::row_major(c, n));
}

/// Row-major `rows x cols` view of `t` with the given index groups as rows
/// and columns, together with the extents of each group.
pub fn matricize<T: Scalar>(
    t: &Tensor<T>,
    row_indices: &[usize],
    col_indices: &[usize],
) -> Result<(Vec<T>, Vec<usize>, Vec<usize>)> {
    if row_indices.is_empty() || col_indices.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    let perm: Vec<usize> = row_indices.iter().chain(col_indices).copied().collect();
    let p = permute(t, &perm)?;
    let row_shape = row_indices.iter().map(|&i| t.shape[i]).collect();
    let col_shape = col_indices.iter().map(|&i| t.shape[i]).collect();
    Ok((p.data, row_shape, col_shape))
}
