//! Deterministic fixtures shared by the benchmarks.

use tnml::{encode, EncodedInput, LocalFeatureMap, Tensor};

/// Pseudo-random entries in `[-1, 1)` from a fixed integer hash.
pub fn filled(shape: &[usize], salt: u64) -> Tensor<f64> {
    let mut k = salt;
    Tensor::from_fn(shape, |_| {
        k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((k >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// `n` encoded inputs of `n_sites` pixels with labels cycling through `n_labels`.
pub fn inputs(n: usize, n_sites: usize, n_labels: usize, map: &LocalFeatureMap) -> Vec<EncodedInput<f64>> {
    let px = filled(&[n, n_sites], 7);
    (0..n)
        .map(|i| {
            let x: Vec<f64> = px.data()[i * n_sites..(i + 1) * n_sites].iter().map(|v| 0.5 * (v + 1.0)).collect();
            encode(&x, map, Some(i % n_labels)).expect("pixels in range")
        })
        .collect()
}
