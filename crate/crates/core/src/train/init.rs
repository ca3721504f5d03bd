use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_map::{EncodedInput, LocalFeatureMap};
use crate::mps::{exact_rank_cap, MpsClassifier};
use crate::scalar::Scalar;
use crate::svd::{svd, TruncParams};
use crate::tensor::Tensor;

/// Builds sites `N-1, ..., 1` right-orthogonal from the data: each keeps
/// the leading `m0` principal directions of `phi_k(x_n) (x) R_{k+1}(x_n)`
/// over the examples, each scaled to unit norm so that every example
/// weighs the same. Site 0 carries the label and is drawn uniformly from
/// `[-0.5, 0.5]`, then scaled so that `||W|| = 1`.
pub fn init_from_data<T: Scalar>(
    map: LocalFeatureMap,
    n_labels: usize,
    m0: usize,
    data: &[EncodedInput<T>],
    seed: u64,
) -> Result<MpsClassifier<T>> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("data-driven initialization needs examples".into()))?;
    let n_sites = first.n_sites();
    let d = map.d();
    if n_labels == 0 || m0 == 0 || n_sites == 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid dimensions N = {n_sites}, N_L = {n_labels}, m0 = {m0}"
        )));
    }
    if let Some((i, _)) = data.iter().enumerate().find(|(_, x)| x.n_sites() != n_sites || x.d() != d) {
        return Err(Error::DimensionMismatch(format!("example {i} does not match N = {n_sites}, d = {d}")));
    }
    let n = data.len();
    let mut sites = vec![Tensor::zeros(&[1]); n_sites];
    // envs[n * r + b]: right environment of example n at the current site
    let mut env = vec![T::one(); n];
    let mut r = 1;
    for k in (1..n_sites).rev() {
        let width = d * r;
        let mut y = vec![T::zero(); n * width];
        for (i, x) in data.iter().enumerate() {
            let (phi, e) = (x.vector(k), &env[i * r..(i + 1) * r]);
            for s in 0..d {
                for b in 0..r {
                    y[i * width + s * r + b] = phi[s] * e[b];
                }
            }
        }
        let cap = exact_rank_cap(n_sites, d, m0, k - 1).min(n);
        // unit rows: examples the previous sites captured poorly still
        // count fully when choosing this site's directions
        let mut unit = y.clone();
        for row in unit.chunks_mut(width) {
            let norm = row.iter().map(|v| v.abs_sq()).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v = v.scale(1.0 / norm));
            }
        }
        let res = svd(&Tensor::new(vec![n, width], unit)?, &[0], &[1], &TruncParams::max_rank(cap))?;
        let l = res.kept_rank;
        // rows of V are conjugated right singular vectors, so V y_n picks
        // out the leading components
        let v = res.v.conj().reshape(&[l, d, r])?;
        let vdat = v.data();
        let mut next = vec![T::zero(); n * l];
        for i in 0..n {
            let yi = &y[i * width..(i + 1) * width];
            for a in 0..l {
                next[i * l + a] = vdat[a * width..(a + 1) * width].iter().zip(yi).map(|(&p, &q)| p * q).sum();
            }
        }
        sites[k] = v;
        env = next;
        r = l;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = Tensor::random(&[1, d, n_labels, r], &mut rng);
    // the other sites are isometries, so ||W|| is the norm of site 0
    sites[0] = first.scale(1.0 / first.frobenius_norm());
    MpsClassifier::from_sites(sites, 0, n_labels, map)
}
