//! Matrix product state representation of the label-indexed weight tensor
//! `W^l_{s_1 ... s_N}`.
//!
//! Every site tensor has a left bond, a physical index and a right bond, in
//! that order; the boundary bonds have extent 1. The one site carrying the
//! label index stores it between the physical index and the right bond:
//! `(left, phys, label, right)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_map::{EncodedInput, LocalFeatureMap};
use crate::scalar::Scalar;
use crate::svd::{svd, SvdResult, TruncParams};
use crate::tensor::{contract, permute, Tensor};

mod canonical;
mod io;

pub use canonical::CanonicalMps;
pub use io::{load, save, scalar_kind_of, HEADER_BYTES, MAGIC, VERSION};

/// Largest full tensor `to_full_tensor` will build.
pub const FULL_TENSOR_GUARD: u128 = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpsClassifier<T> {
    sites: Vec<Tensor<T>>,
    label_site: usize,
    n_labels: usize,
    map: LocalFeatureMap,
}

/// Two neighbouring sites merged over their shared bond, indices
/// `(left, phys_j, phys_j+1, right, label)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BondTensor<T> {
    pub tensor: Tensor<T>,
    pub bond: usize,
}

impl<T: Scalar> BondTensor<T> {
    pub fn left_dim(&self) -> usize {
        self.tensor.shape()[0]
    }
    pub fn d(&self) -> usize {
        self.tensor.shape()[1]
    }
    pub fn right_dim(&self) -> usize {
        self.tensor.shape()[3]
    }
    pub fn n_labels(&self) -> usize {
        self.tensor.shape()[4]
    }
}

/// Bond dimension cap `min(m0, d^(j+1), d^(N-1-j))` for bond `j`.
pub fn exact_rank_cap(n_sites: usize, d: usize, m0: usize, bond: usize) -> usize {
    let pow = |e: usize| -> usize {
        let mut acc = 1usize;
        for _ in 0..e {
            acc = acc.saturating_mul(d);
            if acc >= m0 {
                return m0;
            }
        }
        acc
    };
    m0.min(pow(bond + 1)).min(pow(n_sites - 1 - bond))
}

impl<T: Scalar> MpsClassifier<T> {
    pub fn from_sites(sites: Vec<Tensor<T>>, label_site: usize, n_labels: usize, map: LocalFeatureMap) -> Result<Self> {
        let n = sites.len();
        if n == 0 {
            return Err(Error::InvalidShape("an MPS needs at least one site".into()));
        }
        if label_site >= n {
            return Err(Error::InvalidArgument(format!("label site {label_site} >= N = {n}")));
        }
        if n_labels == 0 {
            return Err(Error::InvalidArgument("need at least one label".into()));
        }
        let d = map.d();
        for (j, s) in sites.iter().enumerate() {
            let want = if j == label_site { 4 } else { 3 };
            if s.order() != want {
                return Err(Error::InvalidShape(format!("site {j} has order {}, expected {want}", s.order())));
            }
            if s.shape()[1] != d {
                return Err(Error::DimensionMismatch(format!("site {j} physical extent {} != d = {d}", s.shape()[1])));
            }
            if j == label_site && s.shape()[2] != n_labels {
                return Err(Error::DimensionMismatch(format!("label extent {} != N_L = {n_labels}", s.shape()[2])));
            }
            if !s.is_finite() {
                return Err(Error::NonFinite("site tensor"));
            }
        }
        let model = MpsClassifier {
            sites,
            label_site,
            n_labels,
            map,
        };
        if model.left_dim(0) != 1 || model.right_dim(n - 1) != 1 {
            return Err(Error::InvalidShape("boundary bonds must have extent 1".into()));
        }
        for j in 0..n - 1 {
            if model.right_dim(j) != model.left_dim(j + 1) {
                return Err(Error::ExtentMismatch(format!(
                    "bond {j}: {} vs {}",
                    model.right_dim(j),
                    model.left_dim(j + 1)
                )));
            }
        }
        Ok(model)
    }

    /// Random model with entries uniform in `[-0.5, 0.5]`, rescaled to
    /// `||W|| = 1`, label on site 0.
    pub fn init_random(n_sites: usize, map: LocalFeatureMap, n_labels: usize, m0: usize, seed: u64) -> Result<Self> {
        if n_sites == 0 || n_labels == 0 || m0 == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid dimensions N = {n_sites}, N_L = {n_labels}, m0 = {m0}"
            )));
        }
        let d = map.d();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = (0..n_sites.saturating_sub(1))
            .map(|j| exact_rank_cap(n_sites, d, m0, j))
            .collect();
        let sites = (0..n_sites)
            .map(|j| {
                let l = if j == 0 { 1 } else { dims[j - 1] };
                let r = if j + 1 == n_sites { 1 } else { dims[j] };
                if j == 0 {
                    Tensor::random(&[l, d, n_labels, r], &mut rng)
                } else {
                    Tensor::random(&[l, d, r], &mut rng)
                }
            })
            .collect();
        let mut model = Self::from_sites(sites, 0, n_labels, map)?;
        model.normalize()?;
        Ok(model)
    }

    /// Rescales every site by the same factor so that `||W|| = 1`.
    pub fn normalize(&mut self) -> Result<()> {
        let log_norm = self.log_norm();
        if !log_norm.is_finite() {
            return Err(Error::NonFinite("model norm"));
        }
        let per_site = (-log_norm / self.n_sites() as f64).exp();
        for s in &mut self.sites {
            *s = s.scale(per_site);
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn d(&self) -> usize {
        self.map.d()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn label_site(&self) -> usize {
        self.label_site
    }

    pub fn map(&self) -> &LocalFeatureMap {
        &self.map
    }

    pub fn sites(&self) -> &[Tensor<T>] {
        &self.sites
    }

    pub fn site(&self, j: usize) -> &Tensor<T> {
        &self.sites[j]
    }

    pub fn left_dim(&self, j: usize) -> usize {
        self.sites[j].shape()[0]
    }

    pub fn right_dim(&self, j: usize) -> usize {
        *self.sites[j].shape().last().unwrap()
    }

    /// Extents of the `N - 1` internal bonds.
    pub fn bond_dims(&self) -> Vec<usize> {
        (0..self.n_sites() - 1).map(|j| self.right_dim(j)).collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.sites.iter().map(|s| s.len()).sum()
    }

    /// `ln ||W||`, accumulated with per-site rescaling so long chains do not
    /// overflow.
    pub fn log_norm(&self) -> f64 {
        let mut env = vec![T::one()];
        let mut dim = 1usize;
        let mut log_acc = 0.0f64;
        for (j, site) in self.sites.iter().enumerate() {
            let r = self.right_dim(j);
            let d = self.d();
            let nl = if j == self.label_site { self.n_labels } else { 1 };
            // site viewed as (left, phys * label, right)
            let p = d * nl;
            let a = site.data();
            let mut out = vec![T::zero(); r * r];
            // tmp[a', (p, b)] = sum_a env[a, a'] A[a, p, b]
            let mut tmp = vec![T::zero(); dim * p * r];
            for x in 0..dim {
                for y in 0..dim {
                    let e = env[x * dim + y];
                    if e == T::zero() {
                        continue;
                    }
                    let row = &a[x * p * r..(x + 1) * p * r];
                    let dst = &mut tmp[y * p * r..(y + 1) * p * r];
                    for (t, &v) in dst.iter_mut().zip(row) {
                        *t += e * v;
                    }
                }
            }
            // out[b, b'] = sum_{a', p} tmp[a', p, b] conj(A[a', p, b'])
            for y in 0..dim {
                for q in 0..p {
                    let off = (y * p + q) * r;
                    for b in 0..r {
                        let t = tmp[off + b];
                        if t == T::zero() {
                            continue;
                        }
                        for c in 0..r {
                            out[b * r + c] += t * a[off + c].conj();
                        }
                    }
                }
            }
            let scale = out.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if scale == 0.0 {
                return f64::NEG_INFINITY;
            }
            for v in &mut out {
                *v = v.scale(1.0 / scale);
            }
            log_acc += scale.ln();
            env = out;
            dim = r;
        }
        0.5 * (log_acc + env[0].re().ln())
    }

    pub fn norm(&self) -> f64 {
        self.log_norm().exp()
    }

    fn check_input(&self, input: &EncodedInput<T>) -> Result<()> {
        if input.d() != self.d() || input.n_sites() != self.n_sites() {
            return Err(Error::DimensionMismatch(format!(
                "input has N = {}, d = {}; model has N = {}, d = {}",
                input.n_sites(),
                input.d(),
                self.n_sites(),
                self.d()
            )));
        }
        Ok(())
    }

    /// Contraction of sites `0..j` with the input's local vectors.
    pub fn left_env(&self, input: &EncodedInput<T>, j: usize) -> Vec<T> {
        let mut env = vec![T::one()];
        for k in 0..j {
            env = left_step(&env, &self.sites[k], input.vector(k));
        }
        env
    }

    /// Contraction of sites `j + 1..N` with the input's local vectors.
    pub fn right_env(&self, input: &EncodedInput<T>, j: usize) -> Vec<T> {
        let mut env = vec![T::one()];
        for k in (j + 1..self.n_sites()).rev() {
            env = right_step(&env, &self.sites[k], input.vector(k));
        }
        env
    }

    /// Scores `f^l(x) = W^l . Phi(x)` for every label.
    pub fn evaluate(&self, input: &EncodedInput<T>) -> Result<Vec<T>> {
        self.check_input(input)?;
        let j = self.label_site;
        let l = self.left_env(input, j);
        let r = self.right_env(input, j);
        Ok(label_site_scores(&l, &self.sites[j], input.vector(j), &r, self.n_labels))
    }

    pub fn predict(&self, input: &EncodedInput<T>) -> Result<usize> {
        Ok(argmax_abs(&self.evaluate(input)?))
    }

    /// Merges sites `bond` and `bond + 1`; the label must sit on one of them.
    pub fn bond_tensor(&self, bond: usize) -> Result<BondTensor<T>> {
        if bond + 1 >= self.n_sites() {
            return Err(Error::InvalidArgument(format!("bond {bond} out of range")));
        }
        if self.label_site != bond && self.label_site != bond + 1 {
            return Err(Error::LabelNotOnBond {
                label_site: self.label_site,
                bond,
            });
        }
        let tensor = merge_pair(&self.sites[bond], &self.sites[bond + 1], self.label_site == bond)?;
        Ok(BondTensor { tensor, bond })
    }

    /// Splits a bond tensor back into two sites. Moving right leaves a
    /// left-orthogonal tensor on `bond` and the label on `bond + 1`; moving
    /// left leaves a right-orthogonal tensor on `bond + 1` and the label on
    /// `bond`. Returns the SVD that produced the split.
    pub fn split_bond(&mut self, b: &BondTensor<T>, direction: Direction, trunc: &TruncParams) -> Result<SvdResult<T>> {
        let j = b.bond;
        if j + 1 >= self.n_sites() {
            return Err(Error::InvalidArgument(format!("bond {j} out of range")));
        }
        if self.label_site != j && self.label_site != j + 1 {
            return Err(Error::LabelNotOnBond {
                label_site: self.label_site,
                bond: j,
            });
        }
        let shape = b.tensor.shape();
        if shape[0] != self.left_dim(j)
            || shape[1] != self.d()
            || shape[2] != self.d()
            || shape[3] != self.right_dim(j + 1)
            || shape[4] != self.n_labels
        {
            return Err(Error::DimensionMismatch(format!("bond tensor shape {shape:?} does not fit bond {j}")));
        }
        let (a, c, res) = split_pair(&b.tensor, direction, trunc)?;
        self.install_pair(j, a, c, direction);
        Ok(res)
    }

    /// Replaces sites `bond` and `bond + 1` with the output of [`split_pair`].
    pub(crate) fn install_pair(&mut self, bond: usize, a: Tensor<T>, c: Tensor<T>, direction: Direction) {
        self.sites[bond] = a;
        self.sites[bond + 1] = c;
        self.label_site = match direction {
            Direction::Right => bond + 1,
            Direction::Left => bond,
        };
    }

    /// Moves the label index to `target` by exact two-site splits; the
    /// represented `W^l` is unchanged.
    pub fn move_label(&self, target: usize) -> Result<Self> {
        if target >= self.n_sites() {
            return Err(Error::InvalidArgument(format!("target site {target} >= N = {}", self.n_sites())));
        }
        let mut m = self.clone();
        m.move_label_in_place(target)?;
        Ok(m)
    }

    pub(crate) fn move_label_in_place(&mut self, target: usize) -> Result<()> {
        let exact = TruncParams::exact();
        while self.label_site < target {
            let b = self.bond_tensor(self.label_site)?;
            self.split_bond(&b, Direction::Right, &exact)?;
        }
        while self.label_site > target {
            let b = self.bond_tensor(self.label_site - 1)?;
            self.split_bond(&b, Direction::Left, &exact)?;
        }
        Ok(())
    }

    /// Regauges in place so that every site left of the label site is
    /// left-orthogonal and every site right of it is right-orthogonal. `W`
    /// is unchanged and no bond grows.
    pub fn orthogonalize(&mut self) -> Result<()> {
        let exact = TruncParams::exact();
        let c = self.label_site;
        for k in 0..c {
            let res = svd(&self.sites[k], &[0, 1], &[2], &exact)?;
            let mut sv = res.v;
            scale_leading(&mut sv, &res.s);
            self.sites[k] = res.u;
            self.sites[k + 1] = contract(&sv, &self.sites[k + 1], &[(1, 0)])?;
        }
        for k in (c + 1..self.n_sites()).rev() {
            let res = svd(&self.sites[k], &[0], &[1, 2], &exact)?;
            let mut us = res.u;
            scale_trailing(&mut us, &res.s);
            self.sites[k] = res.v;
            let prev = &self.sites[k - 1];
            self.sites[k - 1] = contract(prev, &us, &[(prev.order() - 1, 0)])?;
        }
        Ok(())
    }

    pub fn canonicalize(&self, core_site: usize) -> Result<CanonicalMps<T>> {
        CanonicalMps::from_mps(self, core_site)
    }

    /// Dense `(label, s_1, ..., s_N)` tensor; refuses above 2^24 entries.
    pub fn to_full_tensor(&self) -> Result<Tensor<T>> {
        let n = self.n_sites();
        let size = (self.d() as u128)
            .checked_pow(n as u32)
            .and_then(|v| v.checked_mul(self.n_labels as u128))
            .unwrap_or(u128::MAX);
        if size > FULL_TENSOR_GUARD {
            return Err(Error::SizeGuard(size));
        }
        // running tensor keeps a leading unit bond and a trailing open bond
        let mut acc = self.sites[0].clone();
        for j in 1..n {
            let last = acc.order() - 1;
            acc = contract(&acc, &self.sites[j], &[(last, 0)])?;
        }
        // indices: (1, s_0, .., [label], .., s_{N-1}, 1)
        let label_pos = 1 + self.label_site + 1;
        let order = acc.order();
        let mut perm = vec![label_pos];
        perm.extend((1..order - 1).filter(|&i| i != label_pos));
        perm.push(0);
        perm.push(order - 1);
        let p = permute(&acc, &perm)?;
        let mut shape = vec![self.n_labels];
        shape.extend(std::iter::repeat_n(self.d(), n));
        p.reshape(&shape)
    }

    pub(crate) fn set_sites(&mut self, sites: Vec<Tensor<T>>, label_site: usize) {
        self.sites = sites;
        self.label_site = label_site;
    }
}

/// Index of the largest `|f^l|`; ties go to the lowest label.
pub fn argmax_abs<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (l, s) in scores.iter().enumerate() {
        let v = s.abs();
        if v > best_val {
            best = l;
            best_val = v;
        }
    }
    best
}

/// `out[b] = sum_{a, s} env[a] phi[s] A[a, s, b]`.
pub fn left_step<T: Scalar>(env: &[T], site: &Tensor<T>, phi: &[T]) -> Vec<T> {
    let shape = site.shape();
    let (l, d, r) = (shape[0], shape[1], shape[2]);
    debug_assert_eq!(env.len(), l);
    let a = site.data();
    let mut out = vec![T::zero(); r];
    for x in 0..l {
        let e = env[x];
        if e == T::zero() {
            continue;
        }
        for s in 0..d {
            let w = e * phi[s];
            if w == T::zero() {
                continue;
            }
            let row = &a[(x * d + s) * r..(x * d + s + 1) * r];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
    }
    out
}

/// `out[a] = sum_{s, b} A[a, s, b] phi[s] env[b]`.
pub fn right_step<T: Scalar>(env: &[T], site: &Tensor<T>, phi: &[T]) -> Vec<T> {
    let shape = site.shape();
    let (l, d, r) = (shape[0], shape[1], shape[2]);
    debug_assert_eq!(env.len(), r);
    let a = site.data();
    let mut out = vec![T::zero(); l];
    for (x, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for s in 0..d {
            if phi[s] == T::zero() {
                continue;
            }
            let row = &a[(x * d + s) * r..(x * d + s + 1) * r];
            let dot: T = row.iter().zip(env).map(|(&v, &e)| v * e).sum();
            acc += phi[s] * dot;
        }
        *o = acc;
    }
    out
}

/// Scores from a `(left, phys, label, right)` site between two environments.
pub fn label_site_scores<T: Scalar>(l: &[T], site: &Tensor<T>, phi: &[T], r: &[T], n_labels: usize) -> Vec<T> {
    let shape = site.shape();
    let (ld, d, nl, rd) = (shape[0], shape[1], shape[2], shape[3]);
    debug_assert_eq!(nl, n_labels);
    let a = site.data();
    let mut out = vec![T::zero(); nl];
    for x in 0..ld {
        if l[x] == T::zero() {
            continue;
        }
        for s in 0..d {
            let w = l[x] * phi[s];
            if w == T::zero() {
                continue;
            }
            for (lab, o) in out.iter_mut().enumerate() {
                let off = ((x * d + s) * nl + lab) * rd;
                let dot: T = a[off..off + rd].iter().zip(r).map(|(&v, &e)| v * e).sum();
                *o += w * dot;
            }
        }
    }
    out
}

/// Contracts two neighbouring sites into a bond tensor laid out
/// `(left, s_j, s_{j+1}, right, label)`.
pub fn merge_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, label_on_left: bool) -> Result<Tensor<T>> {
    if label_on_left {
        // (l, s, lab, c) x (c, t, r) -> (l, s, lab, t, r)
        permute(&contract(a, b, &[(3, 0)])?, &[0, 1, 3, 4, 2])
    } else {
        // (l, s, c) x (c, t, lab, r) -> (l, s, t, lab, r)
        permute(&contract(a, b, &[(2, 0)])?, &[0, 1, 2, 4, 3])
    }
}

/// SVD split of a `(left, s, t, right, label)` tensor into two sites. Moving
/// right gives `(U, S V)` with the label on the second site; moving left
/// gives `(U S, V)` with the label on the first.
pub fn split_pair<T: Scalar>(b: &Tensor<T>, direction: Direction, trunc: &TruncParams) -> Result<(Tensor<T>, Tensor<T>, SvdResult<T>)> {
    if b.order() != 5 {
        return Err(Error::InvalidShape(format!("bond tensor must have order 5, got {:?}", b.shape())));
    }
    if !b.is_finite() {
        return Err(Error::NonFinite("bond tensor"));
    }
    match direction {
        Direction::Right => {
            // rows (l, s), columns (t, label, r)
            let res = svd(b, &[0, 1], &[2, 4, 3], trunc)?;
            let mut sv = res.v.clone();
            scale_leading(&mut sv, &res.s);
            Ok((res.u.clone(), sv, res))
        }
        Direction::Left => {
            // rows (l, s, label), columns (t, r)
            let res = svd(b, &[0, 1, 4], &[2, 3], trunc)?;
            let mut us = res.u.clone();
            scale_trailing(&mut us, &res.s);
            Ok((us, res.v.clone(), res))
        }
    }
}

/// Multiplies slice `k` of the leading index by `s[k]`.
fn scale_leading<T: Scalar>(t: &mut Tensor<T>, s: &[f64]) {
    let block = t.len() / s.len();
    for (chunk, &sv) in t.data_mut().chunks_exact_mut(block).zip(s) {
        for v in chunk {
            *v = v.scale(sv);
        }
    }
}

/// Multiplies slice `k` of the trailing index by `s[k]`.
fn scale_trailing<T: Scalar>(t: &mut Tensor<T>, s: &[f64]) {
    let k = s.len();
    for row in t.data_mut().chunks_exact_mut(k) {
        for (v, &sv) in row.iter_mut().zip(s) {
            *v = v.scale(sv);
        }
    }
}
