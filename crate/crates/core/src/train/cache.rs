use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_map::EncodedInput;
use crate::mps::{left_step, right_step, Direction, MpsClassifier};
use crate::scalar::Scalar;

/// Examples per parallel task when advancing the cache.
const ADVANCE_CHUNK: usize = 64;

/// Projections of every training input onto the sites outside the active
/// bond `j`: `left[k]` holds sites `0..k`, `right[k]` holds sites `k+1..N`,
/// each stored as `[example][bond index]`. Only `left[0..=j]` and
/// `right[j+1..N]` are kept; the rest are dropped when they go stale.
#[derive(Clone, Debug)]
pub struct EnvironmentCache<T> {
    bond: usize,
    n_examples: usize,
    left: Vec<Vec<T>>,
    right: Vec<Vec<T>>,
    left_dims: Vec<usize>,
    right_dims: Vec<usize>,
    flops: u64,
}

impl<T: Scalar> EnvironmentCache<T> {
    pub fn new(model: &MpsClassifier<T>, data: &[EncodedInput<T>], bond: usize) -> Result<Self> {
        let n = model.n_sites();
        if n < 2 || bond + 1 >= n {
            return Err(Error::InvalidArgument(format!("bond {bond} out of range for N = {n}")));
        }
        for x in data {
            if x.n_sites() != n || x.d() != model.d() {
                return Err(Error::DimensionMismatch(format!(
                    "input has N = {}, d = {}; model has N = {n}, d = {}",
                    x.n_sites(),
                    x.d(),
                    model.d()
                )));
            }
        }
        let mut cache = EnvironmentCache {
            bond,
            n_examples: data.len(),
            left: vec![Vec::new(); n],
            right: vec![Vec::new(); n],
            left_dims: vec![0; n],
            right_dims: vec![0; n],
            flops: 0,
        };
        cache.left[0] = vec![T::one(); data.len()];
        cache.left_dims[0] = 1;
        cache.right[n - 1] = vec![T::one(); data.len()];
        cache.right_dims[n - 1] = 1;
        for k in 0..bond {
            cache.push_left(model, data, k)?;
        }
        for k in (bond + 2..n).rev() {
            cache.push_right(model, data, k)?;
        }
        Ok(cache)
    }

    pub fn bond(&self) -> usize {
        self.bond
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    /// Flops spent building and advancing the cache so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn left_dim(&self) -> usize {
        self.left_dims[self.bond]
    }

    pub fn right_dim(&self) -> usize {
        self.right_dims[self.bond + 1]
    }

    /// Left projection of example `n` for the active bond.
    pub fn left_env(&self, n: usize) -> &[T] {
        let dim = self.left_dims[self.bond];
        &self.left[self.bond][n * dim..(n + 1) * dim]
    }

    /// Right projection of example `n` for the active bond.
    pub fn right_env(&self, n: usize) -> &[T] {
        let dim = self.right_dims[self.bond + 1];
        &self.right[self.bond + 1][n * dim..(n + 1) * dim]
    }

    pub(crate) fn left_block(&self) -> &[T] {
        &self.left[self.bond]
    }

    pub(crate) fn right_block(&self) -> &[T] {
        &self.right[self.bond + 1]
    }

    pub fn check_bond(&self, bond: usize) -> Result<()> {
        if bond != self.bond {
            return Err(Error::CacheMismatch {
                cached: self.bond,
                requested: bond,
            });
        }
        Ok(())
    }

    /// Moves the active bond one site after the split at the current bond.
    /// The site that leaves the bond must be label-free.
    pub fn advance(&mut self, model: &MpsClassifier<T>, data: &[EncodedInput<T>], direction: Direction) -> Result<()> {
        let n = model.n_sites();
        let j = self.bond;
        if data.len() != self.n_examples {
            return Err(Error::DimensionMismatch(format!(
                "cache holds {} examples, got {}",
                self.n_examples,
                data.len()
            )));
        }
        match direction {
            Direction::Right => {
                if j + 2 >= n {
                    return Err(Error::Boundary {
                        bond: j,
                        direction: direction.name(),
                    });
                }
                self.push_left(model, data, j)?;
                self.right[j + 1] = Vec::new();
                self.bond = j + 1;
            }
            Direction::Left => {
                if j == 0 {
                    return Err(Error::Boundary {
                        bond: j,
                        direction: direction.name(),
                    });
                }
                self.push_right(model, data, j + 1)?;
                // still valid, but no longer needed from here on
                self.left[j] = Vec::new();
                self.bond = j - 1;
            }
        }
        Ok(())
    }

    /// `left[k + 1]` from `left[k]` and site `k`.
    fn push_left(&mut self, model: &MpsClassifier<T>, data: &[EncodedInput<T>], k: usize) -> Result<()> {
        let site = model.site(k);
        if site.order() != 3 {
            return Err(Error::InvalidArgument(format!("site {k} carries the label and cannot join the left wing")));
        }
        let (l, d, r) = (site.shape()[0], site.shape()[1], site.shape()[2]);
        if self.left_dims[k] != l || self.left[k].len() != l * self.n_examples {
            return Err(Error::CacheMismatch {
                cached: self.bond,
                requested: k,
            });
        }
        let src = &self.left[k];
        let mut out = vec![T::zero(); r * self.n_examples];
        out.par_chunks_mut(ADVANCE_CHUNK * r)
            .zip(src.par_chunks(ADVANCE_CHUNK * l))
            .zip(data.par_chunks(ADVANCE_CHUNK))
            .for_each(|((o, s), xs)| {
                for (i, x) in xs.iter().enumerate() {
                    let v = left_step(&s[i * l..(i + 1) * l], site, x.vector(k));
                    o[i * r..(i + 1) * r].copy_from_slice(&v);
                }
            });
        self.left[k + 1] = out;
        self.left_dims[k + 1] = r;
        self.flops += (2 * l * d * r * self.n_examples) as u64;
        Ok(())
    }

    /// `right[k - 1]` from `right[k]` and site `k`.
    fn push_right(&mut self, model: &MpsClassifier<T>, data: &[EncodedInput<T>], k: usize) -> Result<()> {
        let site = model.site(k);
        if site.order() != 3 {
            return Err(Error::InvalidArgument(format!("site {k} carries the label and cannot join the right wing")));
        }
        let (l, d, r) = (site.shape()[0], site.shape()[1], site.shape()[2]);
        if self.right_dims[k] != r || self.right[k].len() != r * self.n_examples {
            return Err(Error::CacheMismatch {
                cached: self.bond,
                requested: k,
            });
        }
        let src = &self.right[k];
        let mut out = vec![T::zero(); l * self.n_examples];
        out.par_chunks_mut(ADVANCE_CHUNK * l)
            .zip(src.par_chunks(ADVANCE_CHUNK * r))
            .zip(data.par_chunks(ADVANCE_CHUNK))
            .for_each(|((o, s), xs)| {
                for (i, x) in xs.iter().enumerate() {
                    let v = right_step(&s[i * r..(i + 1) * r], site, x.vector(k));
                    o[i * l..(i + 1) * l].copy_from_slice(&v);
                }
            });
        self.right[k - 1] = out;
        self.right_dims[k - 1] = l;
        self.flops += (2 * l * d * r * self.n_examples) as u64;
        Ok(())
    }
}

/// Free-function form of [`EnvironmentCache::advance`].
pub fn advance_cache<T: Scalar>(
    cache: &mut EnvironmentCache<T>,
    model: &MpsClassifier<T>,
    data: &[EncodedInput<T>],
    direction: Direction,
) -> Result<()> {
    cache.advance(model, data, direction)
}
