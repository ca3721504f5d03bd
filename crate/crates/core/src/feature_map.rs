//! Local feature maps `x -> phi(x)` and the factored tensor-product encoding
//! of an input vector.
//!
//! The product map `Phi(x) = phi(x_1) (x) ... (x) phi(x_N)` is never
//! materialized; an [`EncodedInput`] keeps the `N` local vectors.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::scalar::{Scalar, ScalarKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// `[cos(pi x / 2), sin(pi x / 2)]`
    HalfAngle,
    /// `sqrt(C(d-1, s-1)) cos^(d-s)(pi x / 2) sin^(s-1)(pi x / 2)`
    SpinCoherent,
    /// `[cos(pi x), sin(pi x)]`
    FullAngle,
    /// `[e^{i 3 pi x / 2} cos(pi x / 2), e^{-i 3 pi x / 2} sin(pi x / 2)]`
    PhaseModulated,
}

impl MapKind {
    pub fn code(self) -> u8 {
        match self {
            MapKind::HalfAngle => 0,
            MapKind::SpinCoherent => 1,
            MapKind::FullAngle => 2,
            MapKind::PhaseModulated => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => MapKind::HalfAngle,
            1 => MapKind::SpinCoherent,
            2 => MapKind::FullAngle,
            3 => MapKind::PhaseModulated,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            MapKind::HalfAngle => "half_angle",
            MapKind::SpinCoherent => "spin_coherent",
            MapKind::FullAngle => "full_angle",
            MapKind::PhaseModulated => "phase_modulated",
        }
    }
}

impl std::str::FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "half_angle" => MapKind::HalfAngle,
            "spin_coherent" => MapKind::SpinCoherent,
            "full_angle" => MapKind::FullAngle,
            "phase_modulated" => MapKind::PhaseModulated,
            other => return Err(Error::InvalidArgument(format!("unknown map kind {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalFeatureMap {
    kind: MapKind,
    d: usize,
}

impl LocalFeatureMap {
    pub fn new(kind: MapKind, d: usize) -> Result<Self> {
        let ok = match kind {
            MapKind::SpinCoherent => d >= 2,
            _ => d == 2,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{} map does not support d = {d}",
                kind.name()
            )));
        }
        Ok(LocalFeatureMap { kind, d })
    }

    pub fn half_angle() -> Self {
        LocalFeatureMap {
            kind: MapKind::HalfAngle,
            d: 2,
        }
    }

    pub fn spin_coherent(d: usize) -> Result<Self> {
        Self::new(MapKind::SpinCoherent, d)
    }

    pub fn full_angle() -> Self {
        LocalFeatureMap {
            kind: MapKind::FullAngle,
            d: 2,
        }
    }

    pub fn phase_modulated() -> Self {
        LocalFeatureMap {
            kind: MapKind::PhaseModulated,
            d: 2,
        }
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn scalar_kind(&self) -> ScalarKind {
        match self.kind {
            MapKind::PhaseModulated => ScalarKind::Complex,
            _ => ScalarKind::Real,
        }
    }

    /// Factor relating the integration measure to `dx`: `dmu = factor * dx`.
    pub fn measure_factor(&self) -> f64 {
        match self.kind {
            MapKind::PhaseModulated | MapKind::FullAngle => 2.0,
            _ => 1.0,
        }
    }

    /// Evaluates the map into `out` (length `d`); `x` must lie in `[0, 1]`.
    pub fn eval_into<T: Scalar>(&self, x: f64, out: &mut [T]) -> Result<()> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain(x));
        }
        if self.scalar_kind() == ScalarKind::Complex && T::KIND == ScalarKind::Real {
            return Err(Error::ScalarKind {
                expected: ScalarKind::Complex.name(),
                found: T::KIND.name(),
            });
        }
        debug_assert_eq!(out.len(), self.d);
        match self.kind {
            MapKind::HalfAngle => {
                let (c, s) = half_angle(x);
                out[0] = T::from_real(c);
                out[1] = T::from_real(s);
            }
            MapKind::SpinCoherent => {
                let (c, s) = half_angle(x);
                let n = self.d - 1;
                let mut binom = 1.0f64;
                for (k, o) in out.iter_mut().enumerate() {
                    // k = s_j - 1
                    *o = T::from_real(binom.sqrt() * c.powi((n - k) as i32) * s.powi(k as i32));
                    binom = binom * (n - k) as f64 / (k + 1) as f64;
                }
            }
            MapKind::FullAngle => {
                let t = PI * x;
                out[0] = T::from_real(t.cos());
                out[1] = T::from_real(t.sin());
            }
            MapKind::PhaseModulated => {
                let t = FRAC_PI_2 * x;
                let ph = 3.0 * FRAC_PI_2 * x;
                let a = Complex64::from_polar(t.cos(), ph);
                let b = Complex64::from_polar(t.sin(), -ph);
                out[0] = T::from_complex(a).expect("complex scalar");
                out[1] = T::from_complex(b).expect("complex scalar");
            }
        }
        Ok(())
    }
}

// one code path so that spin_coherent(2) reproduces half_angle bit for bit
#[inline(never)]
fn half_angle(x: f64) -> (f64, f64) {
    let (s, c) = (FRAC_PI_2 * x).sin_cos();
    (c, s)
}

pub fn map_local<T: Scalar>(map: &LocalFeatureMap, x: f64) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); map.d()];
    map.eval_into(x, &mut out)?;
    Ok(out)
}

/// An input in factored product form: `N` local vectors of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInput<T> {
    d: usize,
    data: Vec<T>,
    pub label: Option<usize>,
}

impl<T: Scalar> EncodedInput<T> {
    /// Wraps precomputed local vectors; each must have unit norm.
    pub fn from_vectors(vectors: &[Vec<T>], label: Option<usize>) -> Result<Self> {
        let d = vectors.first().map_or(0, |v| v.len());
        if d == 0 || vectors.iter().any(|v| v.len() != d) {
            return Err(Error::DimensionMismatch("local vectors must share a nonzero d".into()));
        }
        for v in vectors {
            let n: f64 = v.iter().map(|x| x.abs_sq()).sum();
            if (n - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("local vector norm^2 {n} is not 1")));
            }
        }
        Ok(EncodedInput {
            d,
            data: vectors.concat(),
            label,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn vector(&self, j: usize) -> &[T] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.d)
    }

    /// Explicit `d^N` product tensor; only sensible for tiny `N`.
    pub fn to_product_tensor(&self) -> Tensor<T> {
        let n = self.n_sites();
        let shape = vec![self.d; n];
        Tensor::from_fn(&shape, |idx| {
            idx.iter()
                .enumerate()
                .fold(T::one(), |acc, (j, &s)| acc * self.vector(j)[s])
        })
    }
}

pub fn encode<T: Scalar>(x: &[f64], map: &LocalFeatureMap, label: Option<usize>) -> Result<EncodedInput<T>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty input vector".into()));
    }
    let d = map.d();
    let mut data = vec![T::zero(); x.len() * d];
    for (xi, out) in x.iter().zip(data.chunks_exact_mut(d)) {
        map.eval_into(*xi, out)?;
    }
    Ok(EncodedInput { d, data, label })
}

/// `G[s][s'] = integral of conj(phi^s) phi^s' dmu` over `[0, 1]`, by
/// Gauss-Legendre quadrature with the map's measure.
pub fn gram_quadrature(map: &LocalFeatureMap, n_nodes: usize) -> Result<Tensor<Complex64>> {
    if n_nodes < 16 {
        return Err(Error::InvalidArgument(format!("need at least 16 nodes, got {n_nodes}")));
    }
    let d = map.d();
    let (nodes, weights) = gauss_legendre(n_nodes, 0.0, 1.0);
    let mut g = Tensor::<Complex64>::zeros(&[d, d]);
    let mf = map.measure_factor();
    let mut phi = vec![Complex64::new(0.0, 0.0); d];
    for (&x, &w) in nodes.iter().zip(&weights) {
        map.eval_into(x, &mut phi)?;
        let g = g.data_mut();
        for s in 0..d {
            for t in 0..d {
                g[s * d + t] += phi[s].conj() * phi[t] * (w * mf);
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn half_angle_values() {
        let m = LocalFeatureMap::half_angle();
        assert!(close(&map_local::<f64>(&m, 0.0).unwrap(), &[1.0, 0.0], 1e-16));
        assert!(close(&map_local::<f64>(&m, 1.0).unwrap(), &[0.0, 1.0], 1e-16));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(&map_local::<f64>(&m, 0.5).unwrap(), &[h, h], 2e-16));
    }

    #[test]
    fn spin_coherent_d3_midpoint() {
        let m = LocalFeatureMap::spin_coherent(3).unwrap();
        let v = map_local::<f64>(&m, 0.5).unwrap();
        assert!(close(&v, &[0.5, 0.7071067811865476, 0.5], 1e-15), "{v:?}");
    }

    #[test]
    fn spin_coherent_d2_is_half_angle_bitwise() {
        let s = LocalFeatureMap::spin_coherent(2).unwrap();
        let h = LocalFeatureMap::half_angle();
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            assert_eq!(map_local::<f64>(&s, x).unwrap(), map_local::<f64>(&h, x).unwrap());
        }
    }

    #[test]
    fn phase_modulated_at_zero() {
        let v = map_local::<Complex64>(&LocalFeatureMap::phase_modulated(), 0.0).unwrap();
        assert_eq!(v, vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
    }

    #[test]
    fn rejects_out_of_range_and_kind_mismatch() {
        let m = LocalFeatureMap::half_angle();
        assert!(matches!(map_local::<f64>(&m, -0.01), Err(Error::OutOfDomain(_))));
        assert!(matches!(map_local::<f64>(&m, 1.0001), Err(Error::OutOfDomain(_))));
        assert!(map_local::<f64>(&m, f64::NAN).is_err());
        assert!(map_local::<f64>(&LocalFeatureMap::phase_modulated(), 0.3).is_err());
        assert!(LocalFeatureMap::new(MapKind::HalfAngle, 3).is_err());
        assert!(LocalFeatureMap::spin_coherent(1).is_err());
    }

    #[test]
    fn unit_norm_on_grid() {
        let maps = [
            LocalFeatureMap::half_angle(),
            LocalFeatureMap::full_angle(),
            LocalFeatureMap::phase_modulated(),
            LocalFeatureMap::spin_coherent(3).unwrap(),
            LocalFeatureMap::spin_coherent(6).unwrap(),
            LocalFeatureMap::spin_coherent(10).unwrap(),
        ];
        for m in maps {
            for i in 0..=1000 {
                let v = map_local::<Complex64>(&m, i as f64 / 1000.0).unwrap();
                let n: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                assert!((n - 1.0).abs() <= 1e-12, "{:?} at {i}: {n}", m.kind());
            }
        }
    }

    #[test]
    fn encode_binary_pair() {
        let e = encode::<f64>(&[0.0, 1.0], &LocalFeatureMap::half_angle(), None).unwrap();
        assert_eq!(e.n_sites(), 2);
        assert_eq!(e.vector(0), &[1.0, 0.0]);
        assert!(close(e.vector(1), &[0.0, 1.0], 1e-16));
        assert!(encode::<f64>(&[0.2, 1.5], &LocalFeatureMap::half_angle(), None).is_err());
    }

    #[test]
    fn product_tensor_matches_loops() {
        let m = LocalFeatureMap::spin_coherent(3).unwrap();
        let x = [0.13, 0.77, 0.42];
        let e = encode::<f64>(&x, &m, None).unwrap();
        let full = e.to_product_tensor();
        let v: Vec<Vec<f64>> = x.iter().map(|&xi| map_local(&m, xi).unwrap()).collect();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let want = v[0][a] * v[1][b] * v[2][c];
                    assert!((full.get(&[a, b, c]) - want).abs() < 1e-16);
                }
            }
        }
        assert!((full.frobenius_norm() - 1.0).abs() < 1e-14);
    }

    fn gram_offdiag_and_diag_error(m: &LocalFeatureMap) -> (f64, f64) {
        let g = gram_quadrature(m, 64).unwrap();
        let d = m.d();
        let mut off = 0.0f64;
        let mut diag = 0.0f64;
        for s in 0..d {
            for t in 0..d {
                let v = g.get(&[s, t]);
                if s == t {
                    diag = diag.max((v - 1.0).norm());
                } else {
                    off = off.max(v.norm());
                }
            }
        }
        (off, diag)
    }

    #[test]
    fn gram_matrices() {
        let (off, diag) = gram_offdiag_and_diag_error(&LocalFeatureMap::phase_modulated());
        assert!(off <= 1e-10 && diag <= 1e-10, "{off} {diag}");
        let (off, diag) = gram_offdiag_and_diag_error(&LocalFeatureMap::full_angle());
        assert!(off <= 1e-10 && diag <= 1e-10);
        // half angle: off-diagonal is 1/pi
        let (off, _) = gram_offdiag_and_diag_error(&LocalFeatureMap::half_angle());
        assert!((off - 1.0 / std::f64::consts::PI).abs() < 1e-12);
        assert!(gram_quadrature(&LocalFeatureMap::half_angle(), 8).is_err());
    }
}
