//! Scalar fields supported by [`Tensor`](crate::Tensor): `f64` and `Complex64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    Real,
    Complex,
}

impl ScalarKind {
    pub fn name(self) -> &'static str {
        match self {
            ScalarKind::Real => "real64",
            ScalarKind::Complex => "complex128",
        }
    }

    /// Bytes per stored value in the model file.
    pub fn width(self) -> usize {
        match self {
            ScalarKind::Real => 8,
            ScalarKind::Complex => 16,
        }
    }
}

/// Iteration budget per singular value for the bidiagonal route.
const SVD_MAX_ITER: usize = 200;

pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + Default
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    const KIND: ScalarKind;

    fn conj(self) -> Self;
    fn abs_sq(self) -> f64;
    fn from_real(x: f64) -> Self;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn is_finite(self) -> bool;

    /// Narrowing from a complex value; `None` if it has an imaginary part and
    /// `Self` is real.
    fn from_complex(z: Complex64) -> Option<Self>;

    fn abs(self) -> f64 {
        self.abs_sq().sqrt()
    }

    fn scale(self, x: f64) -> Self {
        self * Self::from_real(x)
    }

    /// Thin SVD of a row-major `rows x cols` matrix through nalgebra's
    /// bidiagonalization route. Returns `(u, s, vh)` with `u` row-major
    /// `rows x k`, `vh` row-major `k x cols`, `k = min(rows, cols)`.
    fn bidiagonal_svd(rows: usize, cols: usize, data: &[Self]) -> Option<(Vec<Self>, Vec<f64>, Vec<Self>)>;

    /// `c += a b` for an `m x k` by `k x n` product; each matrix is given with
    /// its `(row, column)` element strides.
    fn gemm(m: usize, k: usize, n: usize, a: Strided<Self>, b: Strided<Self>, c: StridedMut<Self>);
}

#[derive(Clone, Copy)]
pub struct Strided<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

pub struct StridedMut<'a, T> {
    pub data: &'a mut [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> Strided<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        Strided { data, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major `rows x cols` matrix.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Strided { data, rs: 1, cs: cols }
    }
}

impl<'a, T> StridedMut<'a, T> {
    pub fn row_major(data: &'a mut [T], cols: usize) -> Self {
        StridedMut { data, rs: cols, cs: 1 }
    }
}

fn assert_span(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "gemm operand out of bounds");
    }
}

fn check_gemm<T>(m: usize, k: usize, n: usize, a: &Strided<T>, b: &Strided<T>, c: &StridedMut<T>) {
    assert_span(a.data.len(), m, k, a.rs, a.cs);
    assert_span(b.data.len(), k, n, b.rs, b.cs);
    assert_span(c.data.len(), m, n, c.rs, c.cs);
}

impl Scalar for f64 {
    const KIND: ScalarKind = ScalarKind::Real;

    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn abs_sq(self) -> f64 {
        self * self
    }
    #[inline]
    fn from_real(x: f64) -> Self {
        x
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn im(self) -> f64 {
        0.0
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn from_complex(z: Complex64) -> Option<Self> {
        (z.im == 0.0).then_some(z.re)
    }
    #[inline]
    fn abs(self) -> f64 {
        f64::abs(self)
    }

    fn bidiagonal_svd(rows: usize, cols: usize, data: &[Self]) -> Option<(Vec<Self>, Vec<f64>, Vec<Self>)> {
        let m = nalgebra::DMatrix::from_row_slice(rows, cols, data);
        let svd = m.try_svd(true, true, f64::EPSILON, SVD_MAX_ITER * rows.min(cols).max(1))?;
        unpack_nalgebra(svd.u?, svd.singular_values, svd.v_t?)
    }

    fn gemm(m: usize, k: usize, n: usize, a: Strided<Self>, b: Strided<Self>, c: StridedMut<Self>) {
        check_gemm(m, k, n, &a, &b, &c);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: every addressed element was bounds-checked above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                1.0,
                c.data.as_mut_ptr(),
                c.rs as isize,
                c.cs as isize,
            );
        }
    }
}

impl Scalar for Complex64 {
    const KIND: ScalarKind = ScalarKind::Complex;

    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn abs_sq(self) -> f64 {
        self.norm_sqr()
    }
    #[inline]
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn im(self) -> f64 {
        self.im
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn from_complex(z: Complex64) -> Option<Self> {
        Some(z)
    }
    #[inline]
    fn abs(self) -> f64 {
        self.norm()
    }
    #[inline]
    fn scale(self, x: f64) -> Self {
        Complex64::new(self.re * x, self.im * x)
    }

    fn bidiagonal_svd(rows: usize, cols: usize, data: &[Self]) -> Option<(Vec<Self>, Vec<f64>, Vec<Self>)> {
        let m = nalgebra::DMatrix::from_row_slice(rows, cols, data);
        let svd = m.try_svd(true, true, f64::EPSILON, SVD_MAX_ITER * rows.min(cols).max(1))?;
        unpack_nalgebra(svd.u?, svd.singular_values, svd.v_t?)
    }

    fn gemm(m: usize, k: usize, n: usize, a: Strided<Self>, b: Strided<Self>, c: StridedMut<Self>) {
        check_gemm(m, k, n, &a, &b, &c);
        if m == 0 || n == 0 {
            return;
        }
        use matrixmultiply::CGemmOption::Standard;
        // SAFETY: bounds checked above; Complex64 is repr(C) with layout [re, im].
        unsafe {
            matrixmultiply::zgemm(
                Standard,
                Standard,
                m,
                k,
                n,
                [1.0, 0.0],
                a.data.as_ptr().cast(),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr().cast(),
                b.rs as isize,
                b.cs as isize,
                [1.0, 0.0],
                c.data.as_mut_ptr().cast(),
                c.rs as isize,
                c.cs as isize,
            );
        }
    }
}

fn unpack_nalgebra<T: nalgebra::Scalar + Copy>(
    u: nalgebra::DMatrix<T>,
    s: nalgebra::DVector<f64>,
    vt: nalgebra::DMatrix<T>,
) -> Option<(Vec<T>, Vec<f64>, Vec<T>)> {
    let to_row_major = |m: &nalgebra::DMatrix<T>| {
        let mut out = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.push(m[(i, j)]);
            }
        }
        out
    };
    Some((to_row_major(&u), s.iter().copied().collect(), to_row_major(&vt)))
}
