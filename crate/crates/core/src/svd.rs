//! Truncated singular value decomposition of matricized tensors.
//!
//! Small problems (at most [`JACOBI_MAX_RANK`] singular values) go through a
//! one-sided Jacobi sweep, which keeps high relative accuracy on the
//! `d*m x d*m*N_L` bond matrices that dominate training. Larger problems use
//! Householder bidiagonalization with implicit QR (nalgebra).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matricize, Tensor};

pub const JACOBI_MAX_RANK: usize = 64;

/// Singular values below this fraction of the largest never count toward the rank.
pub const RANK_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncParams {
    pub max_rank: usize,
    /// Relative threshold: `s_k / s_1 < cutoff` is discarded.
    pub cutoff: f64,
    pub min_rank: usize,
}

impl TruncParams {
    pub fn new(max_rank: usize, cutoff: f64, min_rank: usize) -> Result<Self> {
        let t = TruncParams {
            max_rank,
            cutoff,
            min_rank,
        };
        t.validate()?;
        Ok(t)
    }

    /// Keeps every singular value above the noise floor.
    pub fn exact() -> Self {
        TruncParams {
            max_rank: usize::MAX,
            cutoff: 0.0,
            min_rank: 1,
        }
    }

    pub fn max_rank(max_rank: usize) -> Self {
        TruncParams {
            max_rank,
            cutoff: 1e-10,
            min_rank: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rank == 0 || self.min_rank == 0 {
            return Err(Error::InvalidArgument("ranks must be at least 1".into()));
        }
        if self.min_rank > self.max_rank {
            return Err(Error::InvalidArgument(format!(
                "min_rank {} exceeds max_rank {}",
                self.min_rank, self.max_rank
            )));
        }
        if !(self.cutoff >= 0.0) {
            return Err(Error::InvalidArgument(format!("cutoff {} must be >= 0", self.cutoff)));
        }
        Ok(())
    }

    /// Number of singular values to keep from a descending spectrum.
    pub fn rank_for(&self, spectrum: &[f64]) -> usize {
        let full = spectrum.len();
        let top = spectrum.first().copied().unwrap_or(0.0);
        let threshold = self.cutoff.max(RANK_FLOOR) * top;
        let above = if top > 0.0 {
            spectrum.iter().take_while(|&&s| s >= threshold && s > 0.0).count()
        } else {
            0
        };
        above.min(self.max_rank).max(self.min_rank).min(full)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SvdMethod {
    Auto,
    Jacobi,
    Bidiagonal,
}

/// `T ~ U * diag(S) * V` over a row/column split of the indices of `T`.
///
/// `u` has the row indices followed by one new index of extent `kept_rank`;
/// `v` has the new index first, followed by the column indices.
#[derive(Clone, Debug)]
pub struct SvdResult<T> {
    pub u: Tensor<T>,
    pub s: Vec<f64>,
    pub v: Tensor<T>,
    pub discarded_weight: f64,
    pub kept_rank: usize,
    /// Full descending spectrum before truncation.
    pub spectrum: Vec<f64>,
    pub flops: u64,
}

pub fn svd<T: Scalar>(
    t: &Tensor<T>,
    row_indices: &[usize],
    col_indices: &[usize],
    trunc: &TruncParams,
) -> Result<SvdResult<T>> {
    svd_with(t, row_indices, col_indices, trunc, SvdMethod::Auto)
}

pub fn svd_with<T: Scalar>(
    t: &Tensor<T>,
    row_indices: &[usize],
    col_indices: &[usize],
    trunc: &TruncParams,
    method: SvdMethod,
) -> Result<SvdResult<T>> {
    trunc.validate()?;
    if row_indices.is_empty() || col_indices.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    let mut seen = vec![false; t.order()];
    for &i in row_indices.iter().chain(col_indices) {
        if i >= t.order() {
            return Err(Error::IndexOutOfRange {
                index: i,
                order: t.order(),
            });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("index {i} appears twice")));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument("row and column sets must cover every index".into()));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    let (mat, row_shape, col_shape) = matricize(t, row_indices, col_indices)?;
    let rows: usize = row_shape.iter().product();
    let cols: usize = col_shape.iter().product();

    let full = matrix_svd(&mat, rows, cols, method)?;
    let keep = trunc.rank_for(&full.s);
    let discarded_weight = full.s[keep..].iter().map(|s| s * s).sum();
    let k_full = full.s.len();

    let mut u = Vec::with_capacity(rows * keep);
    for i in 0..rows {
        u.extend_from_slice(&full.u[i * k_full..i * k_full + keep]);
    }
    let v = full.vh[..keep * cols].to_vec();

    let mut u_shape = row_shape;
    u_shape.push(keep);
    let mut v_shape = vec![keep];
    v_shape.extend(col_shape);
    Ok(SvdResult {
        u: Tensor::new(u_shape, u)?,
        s: full.s[..keep].to_vec(),
        v: Tensor::new(v_shape, v)?,
        discarded_weight,
        kept_rank: keep,
        spectrum: full.s,
        flops: full.flops,
    })
}

/// Thin decomposition of a row-major matrix, all `min(rows, cols)` values.
#[derive(Clone, Debug)]
pub struct MatrixSvd<T> {
    pub u: Vec<T>,
    pub s: Vec<f64>,
    pub vh: Vec<T>,
    pub flops: u64,
}

pub fn matrix_svd<T: Scalar>(a: &[T], rows: usize, cols: usize, method: SvdMethod) -> Result<MatrixSvd<T>> {
    assert_eq!(a.len(), rows * cols);
    let k = rows.min(cols);
    let use_jacobi = match method {
        SvdMethod::Auto => k <= JACOBI_MAX_RANK,
        SvdMethod::Jacobi => true,
        SvdMethod::Bidiagonal => false,
    };
    // factor a copy scaled to unit max entry; both routes behave best near 1
    let amax = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let scaled;
    let a = if amax > 0.0 && amax != 1.0 {
        scaled = a.iter().map(|v| v.scale(1.0 / amax)).collect::<Vec<_>>();
        &scaled[..]
    } else {
        a
    };
    let mut out = if use_jacobi {
        jacobi_svd(a, rows, cols)
    } else {
        let (u, s, vh) = T::bidiagonal_svd(rows, cols, a).ok_or(Error::NonFinite("svd iteration"))?;
        let (m, n) = (rows.max(cols) as u64, k as u64);
        MatrixSvd {
            u,
            s,
            vh,
            flops: 4 * m * n * n + 8 * n * n * n,
        }
    };
    if amax > 0.0 && amax != 1.0 {
        out.s.iter_mut().for_each(|s| *s *= amax);
    }
    sort_descending(&mut out, rows, cols);
    Ok(out)
}

fn sort_descending<T: Scalar>(svd: &mut MatrixSvd<T>, rows: usize, cols: usize) {
    let k = svd.s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.s[b].total_cmp(&svd.s[a]));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return;
    }
    let s = order.iter().map(|&o| svd.s[o]).collect();
    let mut u = Vec::with_capacity(rows * k);
    for i in 0..rows {
        u.extend(order.iter().map(|&o| svd.u[i * k + o]));
    }
    let mut vh = Vec::with_capacity(k * cols);
    for &o in &order {
        vh.extend_from_slice(&svd.vh[o * cols..(o + 1) * cols]);
    }
    svd.s = s;
    svd.u = u;
    svd.vh = vh;
}

/// One-sided (Hestenes) Jacobi on the orientation with fewer columns.
fn jacobi_svd<T: Scalar>(a: &[T], rows: usize, cols: usize) -> MatrixSvd<T> {
    if cols <= rows {
        let (u, s, v, flops) = hestenes(a, rows, cols, false);
        // A = U S V^H  with V stored column-major n x n; vh row-major = V^H
        let n = cols;
        let mut vh = vec![T::zero(); n * n];
        for j in 0..n {
            for i in 0..n {
                vh[j * n + i] = v[j * n + i].conj();
            }
        }
        MatrixSvd { u, s, vh, flops }
    } else {
        // A^H = U' S V'^H  =>  A = V' S U'^H
        let (up, s, vp, flops) = hestenes(a, rows, cols, true);
        let m = cols; // rows of A^H
        let n = rows; // cols of A^H
        // U of A = V' (n x n), row-major: U[i][j] = V'[i, j] = column-major vp[j*n + i]
        let mut u = vec![T::zero(); n * n];
        for j in 0..n {
            for i in 0..n {
                u[i * n + j] = vp[j * n + i];
            }
        }
        // vh of A = U'^H (n x m): vh[j][i] = conj(U'[i][j]), U' row-major m x n
        let mut vh = vec![T::zero(); n * m];
        for i in 0..m {
            for j in 0..n {
                vh[j * m + i] = up[i * n + j].conj();
            }
        }
        MatrixSvd { u, s, vh, flops }
    }
}

/// Orthogonalizes the columns of an `m x n` matrix (`m >= n`).
///
/// With `adjoint` set, the input is the row-major `n x m` matrix `B` and the
/// routine factorizes `B^H`. Returns `U` row-major `m x n`, singular values,
/// and `V` column-major `n x n`.
fn hestenes<T: Scalar>(a: &[T], rows: usize, cols: usize, adjoint: bool) -> (Vec<T>, Vec<f64>, Vec<T>, u64) {
    let (m, n) = if adjoint { (cols, rows) } else { (rows, cols) };
    // columns stored contiguously
    let mut w = vec![T::zero(); m * n];
    if adjoint {
        // column j of B^H is the conjugate of row j of B
        for j in 0..n {
            for i in 0..m {
                w[j * m + i] = a[j * cols + i].conj();
            }
        }
    } else {
        for i in 0..m {
            for j in 0..n {
                w[j * m + i] = a[i * cols + j];
            }
        }
    }
    let mut v = vec![T::zero(); n * n];
    for j in 0..n {
        v[j * n + j] = T::one();
    }
    let mut norms: Vec<f64> = (0..n).map(|j| col_norm_sq(&w[j * m..(j + 1) * m])).collect();
    let mut flops = 2 * (m * n) as u64;

    const TOL: f64 = 1e-15;
    const MAX_SWEEPS: usize = 80;
    // squared column norm treated as null; inputs arrive scaled to unit max
    // entry, and rotating columns this small overflows the phase
    const NEGLIGIBLE: f64 = NEGLIGIBLE_NORM_SQ;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha < NEGLIGIBLE || beta < NEGLIGIBLE {
                    continue;
                }
                let (lo, hi) = w.split_at_mut(q * m);
                let cp = &mut lo[p * m..(p + 1) * m];
                let cq = &mut hi[..m];
                let g: T = cp.iter().zip(cq.iter()).map(|(&x, &y)| x.conj() * y).sum();
                flops += 2 * m as u64;
                let gabs = g.abs();
                if gabs <= TOL * alpha.sqrt() * beta.sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gabs);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let phase = g.scale(1.0 / gabs);
                let ps = phase.scale(s);
                let pcs = phase.conj().scale(s);
                let cc = T::from_real(c);
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xo, yo) = (*x, *y);
                    *x = cc * xo - pcs * yo;
                    *y = ps * xo + cc * yo;
                }
                let (vlo, vhi) = v.split_at_mut(q * n);
                for (x, y) in vlo[p * n..(p + 1) * n].iter_mut().zip(vhi[..n].iter_mut()) {
                    let (xo, yo) = (*x, *y);
                    *x = cc * xo - pcs * yo;
                    *y = ps * xo + cc * yo;
                }
                norms[p] = col_norm_sq(&w[p * m..(p + 1) * m]);
                norms[q] = col_norm_sq(&w[q * m..(q + 1) * m]);
                flops += (6 * m + 6 * n + 4 * m) as u64;
            }
        }
        if !rotated {
            break;
        }
    }

    let s: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    let smax = s.iter().copied().fold(0.0, f64::max);
    // normalize columns into U; weak or null columns are re-orthogonalized
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut ucols = vec![T::zero(); m * n];
    let mut done: Vec<usize> = Vec::with_capacity(n);
    for &j in &order {
        let col = &w[j * m..(j + 1) * m];
        let target = &mut ucols[j * m..(j + 1) * m].to_vec();
        let sj = s[j];
        let mut ok = false;
        if sj * sj >= NEGLIGIBLE_NORM_SQ && sj.is_finite() {
            for (t, &x) in target.iter_mut().zip(col) {
                *t = x.scale(1.0 / sj);
            }
            if sj < 1e-8 * smax {
                ok = orthonormalize_against(target, &ucols, &done, m);
            } else {
                ok = true;
            }
        }
        if !ok {
            complete_basis(target, &ucols, &done, m);
        }
        ucols[j * m..(j + 1) * m].copy_from_slice(target);
        done.push(j);
    }
    let mut u = vec![T::zero(); m * n];
    for j in 0..n {
        for i in 0..m {
            u[i * n + j] = ucols[j * m + i];
        }
    }
    (u, s, v, flops)
}

const NEGLIGIBLE_NORM_SQ: f64 = 1e-200;

fn col_norm_sq<T: Scalar>(c: &[T]) -> f64 {
    c.iter().map(|v| v.abs_sq()).sum()
}

/// Two passes of modified Gram-Schmidt against the finished columns.
fn orthonormalize_against<T: Scalar>(x: &mut [T], cols: &[T], done: &[usize], m: usize) -> bool {
    for _ in 0..2 {
        for &j in done {
            let q = &cols[j * m..(j + 1) * m];
            let proj: T = q.iter().zip(x.iter()).map(|(&a, &b)| a.conj() * b).sum();
            for (xi, &qi) in x.iter_mut().zip(q) {
                *xi -= proj * qi;
            }
        }
    }
    let nrm = col_norm_sq(x).sqrt();
    if nrm < 0.5 {
        return false;
    }
    for xi in x.iter_mut() {
        *xi = xi.scale(1.0 / nrm);
    }
    true
}

fn complete_basis<T: Scalar>(x: &mut [T], cols: &[T], done: &[usize], m: usize) {
    for e in 0..m {
        x.iter_mut().for_each(|v| *v = T::zero());
        x[e] = T::one();
        if orthonormalize_against(x, cols, done, m) {
            return;
        }
    }
    unreachable!("no unit vector left to complete an orthonormal basis");
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn identity_spectrum() {
        let r = svd(&mat(2, 2, &[1., 0., 0., 1.]), &[0], &[1], &TruncParams::exact()).unwrap();
        assert_eq!(r.kept_rank, 2);
        assert!((r.s[0] - 1.0).abs() < 1e-15 && (r.s[1] - 1.0).abs() < 1e-15);
        assert_eq!(r.discarded_weight, 0.0);
    }

    #[test]
    fn rank_one_matrix() {
        let a = mat(2, 2, &[1., 1., 1., 1.]);
        let r = svd(&a, &[0], &[1], &TruncParams::new(10, 1e-12, 1).unwrap()).unwrap();
        assert!((r.spectrum[0] - 2.0).abs() < 1e-14);
        assert!(r.spectrum[1].abs() < 1e-14);
        assert_eq!(r.kept_rank, 1);
    }

    #[test]
    fn min_rank_overrides_cutoff() {
        let a = mat(2, 2, &[1., 1., 1., 1.]);
        let r = svd(&a, &[0], &[1], &TruncParams::new(4, 0.5, 2).unwrap()).unwrap();
        assert_eq!(r.kept_rank, 2);
        // the null direction still gets an orthonormal column
        let u = r.u.data();
        let dot = u[0] * u[1] + u[2] * u[3];
        assert!(dot.abs() < 1e-14);
    }

    #[test]
    fn near_null_columns_stay_finite() {
        // columns far below the largest one used to overflow the rotation phase
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = Tensor::<f64>::random(&[6, 5], &mut rng);
        for i in 0..6 {
            for j in 2..5 {
                a.set(&[i, j], 1e-155 * (i + j) as f64);
            }
        }
        let r = svd(&a, &[0], &[1], &TruncParams::exact()).unwrap();
        assert!(r.spectrum.iter().all(|s| s.is_finite()));
        assert!(r.u.is_finite() && r.v.is_finite());
        let k = r.kept_rank;
        for i in 0..6 {
            for j in 0..5 {
                let rec: f64 = (0..k).map(|c| r.u.get(&[i, c]) * r.s[c] * r.v.get(&[c, j])).sum();
                assert!((rec - a.get(&[i, j])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_matrix_keeps_min_rank() {
        let a = Tensor::<f64>::zeros(&[3, 2]);
        let r = svd(&a, &[0], &[1], &TruncParams::max_rank(5)).unwrap();
        assert_eq!(r.kept_rank, 1);
        assert_eq!(r.s, vec![0.0]);
    }

    #[test]
    fn errors() {
        let a = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(svd(&a, &[], &[0, 1], &TruncParams::exact()), Err(Error::EmptyIndexSet)));
        assert!(svd(&a, &[0], &[0], &TruncParams::exact()).is_err());
        let bad = mat(2, 2, &[1., f64::NAN, 0., 1.]);
        assert!(matches!(svd(&bad, &[0], &[1], &TruncParams::exact()), Err(Error::NonFinite(_))));
        assert!(TruncParams::new(2, 0.0, 3).is_err());
    }

    fn check_factorization<T: Scalar>(a: &[T], rows: usize, cols: usize, method: SvdMethod) {
        let f = matrix_svd(a, rows, cols, method).unwrap();
        let k = f.s.len();
        assert!(f.s.windows(2).all(|w| w[0] >= w[1]) && f.s.iter().all(|&s| s >= 0.0));
        // U^H U and V V^H
        for p in 0..k {
            for q in 0..k {
                let uu: T = (0..rows).map(|i| f.u[i * k + p].conj() * f.u[i * k + q]).sum();
                let vv: T = (0..cols).map(|j| f.vh[p * cols + j] * f.vh[q * cols + j].conj()).sum();
                let id = if p == q { 1.0 } else { 0.0 };
                assert!((uu - T::from_real(id)).abs() < 1e-12, "U^H U [{p},{q}]");
                assert!((vv - T::from_real(id)).abs() < 1e-12, "V V^H [{p},{q}]");
            }
        }
        let norm: f64 = a.iter().map(|x| x.abs_sq()).sum::<f64>().sqrt();
        for i in 0..rows {
            for j in 0..cols {
                let r: T = (0..k).map(|p| f.u[i * k + p].scale(f.s[p]) * f.vh[p * cols + j]).sum();
                assert!((r - a[i * cols + j]).abs() < 1e-12 * norm.max(1.0));
            }
        }
    }

    #[test]
    fn both_methods_factorize_real_and_complex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(r, c) in &[(5, 3), (3, 7), (8, 8), (1, 4), (70, 66)] {
            for method in [SvdMethod::Jacobi, SvdMethod::Bidiagonal] {
                let a = Tensor::<f64>::random(&[r, c], &mut rng);
                check_factorization(a.data(), r, c, method);
                let z = Tensor::<Complex64>::random(&[r, c], &mut rng);
                check_factorization(z.data(), r, c, method);
            }
        }
    }

    #[test]
    fn jacobi_and_bidiagonal_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Tensor::<f64>::random(&[12, 9], &mut rng);
        let j = matrix_svd(a.data(), 12, 9, SvdMethod::Jacobi).unwrap();
        let b = matrix_svd(a.data(), 12, 9, SvdMethod::Bidiagonal).unwrap();
        for (x, y) in j.s.iter().zip(&b.s) {
            assert!((x - y).abs() < 1e-13 * j.s[0]);
        }
    }

    #[test]
    fn tensor_index_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::<f64>::random(&[2, 3, 4], &mut rng);
        let r = svd(&t, &[2, 0], &[1], &TruncParams::exact()).unwrap();
        assert_eq!(r.u.shape(), &[4, 2, r.kept_rank]);
        assert_eq!(r.v.shape(), &[r.kept_rank, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    let x: f64 = (0..r.kept_rank).map(|k| r.u.get(&[c, a, k]) * r.s[k] * r.v.get(&[k, b])).sum();
                    assert!((x - t.get(&[a, b, c])).abs() < 1e-13);
                }
            }
        }
    }
}
