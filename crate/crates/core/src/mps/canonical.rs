use crate::error::{Error, Result};
use crate::feature_map::EncodedInput;
use crate::scalar::Scalar;
use crate::svd::{svd, TruncParams};
use crate::tensor::{contract, permute, Tensor};

use super::{left_step, right_step, MpsClassifier};

/// `W^l = U_0 .. U_{c-1} C^l V_c .. V_{N-1}` with left-orthogonal `U`,
/// right-orthogonal `V`, and the core `C` of shape `(m_left, N_L, m_right)`
/// sitting on the cut just left of site `c`.
#[derive(Clone, Debug)]
pub struct CanonicalMps<T> {
    left: Vec<Tensor<T>>,
    core: Tensor<T>,
    right: Vec<Tensor<T>>,
    template: MpsClassifier<T>,
}

impl<T: Scalar> CanonicalMps<T> {
    pub(super) fn from_mps(model: &MpsClassifier<T>, core_site: usize) -> Result<Self> {
        let n = model.n_sites();
        if core_site >= n {
            return Err(Error::InvalidArgument(format!("core site {core_site} >= N = {n}")));
        }
        let mut m = model.clone();
        // three exact passes: sites right of the old label become
        // left-orthogonal on the way right, then right-orthogonal back to the core
        m.move_label_in_place(0)?;
        m.move_label_in_place(n - 1)?;
        m.move_label_in_place(core_site)?;

        // (l, s, lab, r): rows (l, lab), columns (s, r)
        let site = m.site(core_site).clone();
        let res = svd(&site, &[0, 2], &[1, 3], &TruncParams::exact())?;
        let mut core = res.u;
        let k = res.kept_rank;
        for row in core.data_mut().chunks_exact_mut(k) {
            for (v, &s) in row.iter_mut().zip(&res.s) {
                *v = v.scale(s);
            }
        }
        let sites = m.sites().to_vec();
        let left = sites[..core_site].to_vec();
        let mut right = vec![res.v];
        right.extend_from_slice(&sites[core_site + 1..]);
        Ok(CanonicalMps {
            left,
            core,
            right,
            template: m,
        })
    }

    /// Number of left-orthogonal sites; the core sits just left of this site.
    pub fn core_site(&self) -> usize {
        self.left.len()
    }

    pub fn core(&self) -> &Tensor<T> {
        &self.core
    }

    pub fn left_sites(&self) -> &[Tensor<T>] {
        &self.left
    }

    pub fn right_sites(&self) -> &[Tensor<T>] {
        &self.right
    }

    pub fn n_labels(&self) -> usize {
        self.core.shape()[1]
    }

    pub fn norm(&self) -> f64 {
        self.core.frobenius_norm()
    }

    /// `max |U^H U - I|` for left sites and `max |V V^H - I|` for right sites.
    pub fn orthogonality_residuals(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.left.len() + self.right.len());
        for u in &self.left {
            // contract (l, s) of conj(U) with U
            let g = contract(&u.conj(), u, &[(0, 0), (1, 1)]).expect("site shapes");
            out.push(identity_residual(&g));
        }
        for v in &self.right {
            let g = contract(v, &v.conj(), &[(1, 1), (2, 2)]).expect("site shapes");
            out.push(identity_residual(&g));
        }
        out
    }

    /// The projected input `L(x) (x) R(x)` as an `m_left x m_right` matrix.
    pub fn reduced_features(&self, input: &EncodedInput<T>) -> Result<Tensor<T>> {
        let n = self.left.len() + self.right.len();
        if input.n_sites() != n || input.d() != self.template.d() {
            return Err(Error::DimensionMismatch(format!(
                "input has N = {}, d = {}; model has N = {n}, d = {}",
                input.n_sites(),
                input.d(),
                self.template.d()
            )));
        }
        let c = self.left.len();
        let mut l = vec![T::one()];
        for (k, u) in self.left.iter().enumerate() {
            l = left_step(&l, u, input.vector(k));
        }
        let mut r = vec![T::one()];
        for (k, v) in self.right.iter().enumerate().rev() {
            r = right_step(&r, v, input.vector(c + k));
        }
        let (ml, mr) = (l.len(), r.len());
        Tensor::from_fn(&[ml, mr], |i| l[i[0]] * r[i[1]]).reshape(&[ml, mr])
    }

    /// `f^l = sum_{a, b} C[a, l, b] Phi~[a, b]`.
    pub fn evaluate(&self, input: &EncodedInput<T>) -> Result<Vec<T>> {
        let phi = self.reduced_features(input)?;
        let (ml, nl, mr) = (self.core.shape()[0], self.core.shape()[1], self.core.shape()[2]);
        let c = self.core.data();
        let p = phi.data();
        let mut out = vec![T::zero(); nl];
        for a in 0..ml {
            for (lab, o) in out.iter_mut().enumerate() {
                let row = &c[(a * nl + lab) * mr..(a * nl + lab + 1) * mr];
                *o += row.iter().zip(&p[a * mr..(a + 1) * mr]).map(|(&x, &y)| x * y).sum::<T>();
            }
        }
        Ok(out)
    }

    /// Singular values of `W` across the cut held by the core.
    pub fn core_spectrum(&self) -> Result<Vec<f64>> {
        Ok(svd(&self.core, &[0], &[1, 2], &TruncParams::exact())?.spectrum)
    }

    /// Moves the core one cut to the right, turning `V_c` into `U_c`.
    pub fn shift_core_right(&mut self) -> Result<()> {
        if self.right.len() <= 1 {
            return Err(Error::Boundary {
                bond: self.left.len(),
                direction: "right",
            });
        }
        let v = self.right.remove(0);
        // (a, lab, k) x (k, s, b) -> (a, lab, s, b)
        let m = contract(&self.core, &v, &[(2, 0)])?;
        let res = svd(&m, &[0, 2], &[1, 3], &TruncParams::exact())?;
        let mut core = res.v;
        let block = core.len() / res.s.len();
        for (chunk, &s) in core.data_mut().chunks_exact_mut(block).zip(&res.s) {
            for x in chunk {
                *x = x.scale(s);
            }
        }
        self.left.push(res.u);
        self.core = core;
        Ok(())
    }

    /// Absorbs the core back into its right neighbour.
    pub fn to_mps(&self) -> Result<MpsClassifier<T>> {
        let c = self.left.len();
        // (a, lab, k) x (k, s, b) -> (a, lab, s, b) -> (a, s, lab, b)
        let merged = permute(&contract(&self.core, &self.right[0], &[(2, 0)])?, &[0, 2, 1, 3])?;
        let mut sites = self.left.clone();
        sites.push(merged);
        sites.extend_from_slice(&self.right[1..]);
        let mut m = self.template.clone();
        m.set_sites(sites, c);
        MpsClassifier::from_sites(m.sites().to_vec(), c, m.n_labels(), *m.map())
    }
}

fn identity_residual<T: Scalar>(g: &Tensor<T>) -> f64 {
    let n = g.shape()[0];
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { T::one() } else { T::zero() };
            worst = worst.max((g.get(&[i, j]) - id).abs());
        }
    }
    worst
}
