//! Two-component experiments with the full weight tensor `W^l_{s1 s2}`:
//! quadratic classifiers on the plane, Born-rule sampling, likelihood
//! training and the KL scan.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelGrid, LabeledDataset};
use crate::error::{Error, Result};
use crate::feature_map::{map_local, LocalFeatureMap, MapKind};
use crate::quadrature::gauss_legendre;
use crate::scalar::Scalar;

const NORM_TOL: f64 = 1e-8;
const MIN_DENSITY: f64 = 1e-300;
const MIN_GRID: usize = 64;
const MAX_HALVINGS: usize = 60;

/// Dense weights indexed `[label][s1][s2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullWeight<T> {
    pub n_labels: usize,
    pub d: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FullWeight<T> {
    pub fn zeros(n_labels: usize, d: usize) -> Self {
        FullWeight {
            n_labels,
            d,
            data: vec![T::zero(); n_labels * d * d],
        }
    }

    pub fn new(n_labels: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if n_labels == 0 || d == 0 || data.len() != n_labels * d * d {
            return Err(Error::InvalidShape(format!(
                "{} values for ({n_labels}, {d}, {d})",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        Ok(FullWeight { n_labels, d, data })
    }

    pub fn get(&self, label: usize, s1: usize, s2: usize) -> T {
        self.data[(label * self.d + s1) * self.d + s2]
    }

    pub fn label_block(&self, label: usize) -> &[T] {
        let n = self.d * self.d;
        &self.data[label * n..(label + 1) * n]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.abs_sq()).sum()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm_sq().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::NonFinite("weight norm"));
        }
        for v in &mut self.data {
            *v = v.scale(1.0 / n);
        }
        Ok(())
    }

    /// `f^l = sum W^l_{s1 s2} phi1_{s1} phi2_{s2}` for every label.
    pub fn scores(&self, phi1: &[T], phi2: &[T]) -> Vec<T> {
        (0..self.n_labels).map(|l| self.score(l, phi1, phi2)).collect()
    }

    pub fn score(&self, label: usize, phi1: &[T], phi2: &[T]) -> T {
        let d = self.d;
        let w = self.label_block(label);
        let mut f = T::zero();
        for (s1, &a) in phi1.iter().enumerate() {
            let row = &w[s1 * d..(s1 + 1) * d];
            let inner: T = row.iter().zip(phi2).map(|(&w, &b)| w * b).sum();
            f += a * inner;
        }
        f
    }

    pub fn evaluate(&self, map: &LocalFeatureMap, x: [f64; 2]) -> Result<Vec<T>> {
        self.check_map(map)?;
        let phi1 = map_local::<T>(map, x[0])?;
        let phi2 = map_local::<T>(map, x[1])?;
        Ok(self.scores(&phi1, &phi2))
    }

    /// `argmax_l |f^l|`, ties to the lowest label.
    pub fn predict(&self, map: &LocalFeatureMap, x: [f64; 2]) -> Result<usize> {
        Ok(argmax_abs(&self.evaluate(map, x)?).0)
    }

    fn check_map(&self, map: &LocalFeatureMap) -> Result<()> {
        if map.d() != self.d {
            return Err(Error::DimensionMismatch(format!("map d={} for weights d={}", map.d(), self.d)));
        }
        Ok(())
    }
}

fn argmax_abs<T: Scalar>(f: &[T]) -> (usize, f64) {
    let mut best = 0;
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for (l, v) in f.iter().enumerate() {
        let a = v.abs();
        if a > top {
            second = top;
            top = a;
            best = l;
        } else if a > second {
            second = a;
        }
    }
    let margin = if second.is_finite() { top - second } else { top };
    (best, margin)
}

/// Gradient descent settings shared by both toy trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub iters: usize,
    /// Step size on the per-example mean gradient.
    pub rate: f64,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            iters: 2000,
            rate: 1.0,
            seed: 0,
        }
    }
}

impl ToyTrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("rate {}", self.rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ToyTrainReport<T> {
    pub weights: FullWeight<T>,
    /// Cost after each accepted step, starting with the initial cost.
    pub costs: Vec<f64>,
    pub rejected: usize,
}

/// Per-point feature vectors of a two-component dataset.
#[derive(Clone, Debug)]
pub struct EncodedPairs<T> {
    pub d: usize,
    pub phi1: Vec<Vec<T>>,
    pub phi2: Vec<Vec<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> EncodedPairs<T> {
    pub fn new(points: &LabeledDataset, map: &LocalFeatureMap) -> Result<Self> {
        points.validate()?;
        if points.n_features() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "toy data needs 2 components, found {}",
                points.n_features()
            )));
        }
        let mut phi1 = Vec::with_capacity(points.len());
        let mut phi2 = Vec::with_capacity(points.len());
        for x in &points.inputs {
            phi1.push(map_local::<T>(map, x[0])?);
            phi2.push(map_local::<T>(map, x[1])?);
        }
        Ok(EncodedPairs {
            d: map.d(),
            phi1,
            phi2,
            labels: points.labels.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `1/2 sum_n sum_l (f^l(x_n) - delta^l_{L_n})^2`.
pub fn quadratic_cost(w: &FullWeight<f64>, data: &EncodedPairs<f64>) -> f64 {
    let mut c = 0.0;
    for n in 0..data.len() {
        for (l, f) in w.scores(&data.phi1[n], &data.phi2[n]).into_iter().enumerate() {
            let r = f - if l == data.labels[n] { 1.0 } else { 0.0 };
            c += 0.5 * r * r;
        }
    }
    c
}

/// `dC/dW^l_{s1 s2} = sum_n (f^l - delta) phi1_{s1} phi2_{s2}`.
pub fn quadratic_gradient(w: &FullWeight<f64>, data: &EncodedPairs<f64>) -> FullWeight<f64> {
    let d = w.d;
    let mut g = FullWeight::zeros(w.n_labels, d);
    for n in 0..data.len() {
        let (p1, p2) = (&data.phi1[n], &data.phi2[n]);
        for (l, f) in w.scores(p1, p2).into_iter().enumerate() {
            let r = f - if l == data.labels[n] { 1.0 } else { 0.0 };
            let block = &mut g.data[l * d * d..(l + 1) * d * d];
            for s1 in 0..d {
                for s2 in 0..d {
                    block[s1 * d + s2] += r * p1[s1] * p2[s2];
                }
            }
        }
    }
    g
}

/// Normal-equation form of the quadratic cost: `C = 1/2 sum_l w_l' H w_l -
/// b_l' w_l + N/2` with `H = sum_n Phi_n Phi_n'`.
struct QuadraticForm {
    n: usize,
    n_labels: usize,
    h: Vec<f64>,
    b: Vec<Vec<f64>>,
    count: f64,
}

impl QuadraticForm {
    fn new(data: &EncodedPairs<f64>, n_labels: usize) -> Self {
        let d = data.d;
        let n = d * d;
        let mut h = vec![0.0; n * n];
        let mut b = vec![vec![0.0; n]; n_labels];
        let mut phi = vec![0.0; n];
        for k in 0..data.len() {
            for s1 in 0..d {
                for s2 in 0..d {
                    phi[s1 * d + s2] = data.phi1[k][s1] * data.phi2[k][s2];
                }
            }
            for i in 0..n {
                let row = &mut h[i * n..(i + 1) * n];
                for (r, p) in row.iter_mut().zip(&phi) {
                    *r += phi[i] * p;
                }
                b[data.labels[k]][i] += phi[i];
            }
        }
        QuadraticForm {
            n,
            n_labels,
            h,
            b,
            count: data.len() as f64,
        }
    }

    /// Cost and gradient in one pass.
    fn eval(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n;
        let mut grad = vec![0.0; w.len()];
        let mut cost = 0.5 * self.count;
        for l in 0..self.n_labels {
            let wl = &w[l * n..(l + 1) * n];
            let gl = &mut grad[l * n..(l + 1) * n];
            for i in 0..n {
                let hw: f64 = self.h[i * n..(i + 1) * n].iter().zip(wl).map(|(a, b)| a * b).sum();
                gl[i] = hw - self.b[l][i];
                cost += wl[i] * (0.5 * hw - self.b[l][i]);
            }
        }
        (cost, grad)
    }
}

fn spin_map(d: usize) -> Result<LocalFeatureMap> {
    if d == 2 {
        Ok(LocalFeatureMap::half_angle())
    } else {
        LocalFeatureMap::spin_coherent(d)
    }
}

/// Gradient descent on the quadratic cost with the spin-coherent map of
/// dimension `d` (the half-angle map for `d = 2`). A step that raises the
/// cost is retried at half the rate; the rate recovers by doubling after
/// each accepted step, up to its configured value.
pub fn train_full_quadratic(
    points: &LabeledDataset,
    d: usize,
    config: &ToyTrainConfig,
) -> Result<ToyTrainReport<f64>> {
    config.validate()?;
    let map = spin_map(d)?;
    let data = EncodedPairs::<f64>::new(points, &map)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let n_labels = points.n_labels;
    let form = QuadraticForm::new(&data, n_labels);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w: Vec<f64> = (0..n_labels * d * d).map(|_| 0.01 * (rng.random::<f64>() - 0.5)).collect();
    let step0 = config.rate / data.len() as f64;
    let mut step = step0;
    let (mut cost, mut grad) = form.eval(&w);
    if !cost.is_finite() {
        return Err(Error::Divergence("non-finite initial cost".into()));
    }
    let mut costs = vec![cost];
    let mut rejected = 0;
    for _ in 0..config.iters {
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = w.iter().zip(&grad).map(|(w, g)| w - step * g).collect();
            let (c, g) = form.eval(&trial);
            if !c.is_finite() {
                return Err(Error::Divergence(format!("cost {c} at step {step}")));
            }
            if c <= cost {
                w = trial;
                cost = c;
                grad = g;
                accepted = true;
                break;
            }
            step *= 0.5;
            rejected += 1;
        }
        if !accepted {
            break;
        }
        costs.push(cost);
        step = (2.0 * step).min(step0);
    }
    Ok(ToyTrainReport {
        weights: FullWeight::new(n_labels, d, w)?,
        costs,
        rejected,
    })
}

/// Fraction of points whose predicted label differs from the stored one.
pub fn toy_error<T: Scalar>(w: &FullWeight<T>, map: &LocalFeatureMap, points: &LabeledDataset) -> Result<f64> {
    let mut wrong = 0;
    for (x, &l) in points.inputs.iter().zip(&points.labels) {
        if w.predict(map, [x[0], x[1]])? != l {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / points.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionGrid {
    pub labels: LabelGrid,
    /// `|f|` of the winning label minus the runner-up, per cell.
    pub margins: Vec<f64>,
}

impl DecisionGrid {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = self.labels.g;
        writeln!(w, "x1,x2,label,margin")?;
        for i2 in 0..g {
            for i1 in 0..g {
                let (x1, x2) = ((i1 as f64 + 0.5) / g as f64, (i2 as f64 + 0.5) / g as f64);
                writeln!(w, "{x1},{x2},{},{}", self.labels.get(i1, i2), self.margins[i2 * g + i1])?;
            }
        }
        Ok(())
    }
}

fn centre_vectors<T: Scalar>(map: &LocalFeatureMap, g: usize) -> Result<Vec<Vec<T>>> {
    (0..g).map(|i| map_local::<T>(map, (i as f64 + 0.5) / g as f64)).collect()
}

pub fn decision_grid<T: Scalar>(w: &FullWeight<T>, map: &LocalFeatureMap, g: usize) -> Result<DecisionGrid> {
    w.check_map(map)?;
    let phis = centre_vectors::<T>(map, g)?;
    let mut labels = Vec::with_capacity(g * g);
    let mut margins = Vec::with_capacity(g * g);
    for i2 in 0..g {
        for i1 in 0..g {
            let (l, m) = argmax_abs(&w.scores(&phis[i1], &phis[i2]));
            labels.push(l as u8);
            margins.push(m);
        }
    }
    Ok(DecisionGrid {
        labels: LabelGrid { g, labels },
        margins,
    })
}

fn require_orthonormal(map: &LocalFeatureMap) -> Result<()> {
    if map.kind() != MapKind::PhaseModulated {
        return Err(Error::InvalidArgument(format!(
            "generative path needs the orthonormal phase_modulated map, got {}",
            map.kind().name()
        )));
    }
    Ok(())
}

/// Two-label complex model with i.i.d. Gaussian entries, unit norm.
pub fn random_hidden_model(d: usize, seed: u64) -> Result<FullWeight<Complex64>> {
    if d == 0 {
        return Err(Error::InvalidArgument("d = 0".into()));
    }
    gaussian_unit(2, d, seed)
}

fn gaussian_unit(n_labels: usize, d: usize, seed: u64) -> Result<FullWeight<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_labels * d * d)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let mut w = FullWeight::new(n_labels, d, data)?;
    w.normalize()?;
    Ok(w)
}

fn check_normalized<T: Scalar>(w: &FullWeight<T>) -> Result<()> {
    let n = w.norm_sq();
    if (n - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized(n));
    }
    Ok(())
}

/// `P_l = sum_{s1 s2} |W^l_{s1 s2}|^2`.
pub fn label_probabilities<T: Scalar>(w: &FullWeight<T>) -> Result<Vec<f64>> {
    check_normalized(w)?;
    Ok((0..w.n_labels)
        .map(|l| w.label_block(l).iter().map(|v| v.abs_sq()).sum())
        .collect())
}

/// `p(l, x) = |f^l(x)|^2` at the centres of a `g x g` grid, with the cell
/// weight of the measure `dmu`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDistribution {
    pub g: usize,
    pub n_labels: usize,
    /// `values[(l * g + i2) * g + i1]`.
    pub values: Vec<f64>,
    pub cell_weight: f64,
}

impl GridDistribution {
    pub fn new<T: Scalar>(w: &FullWeight<T>, map: &LocalFeatureMap, g: usize) -> Result<Self> {
        w.check_map(map)?;
        if g == 0 {
            return Err(Error::InvalidArgument("grid of size 0".into()));
        }
        let phis = centre_vectors::<T>(map, g)?;
        let mut values = Vec::with_capacity(w.n_labels * g * g);
        for l in 0..w.n_labels {
            for i2 in 0..g {
                for i1 in 0..g {
                    values.push(w.score(l, &phis[i1], &phis[i2]).abs_sq());
                }
            }
        }
        let h = map.measure_factor() / g as f64;
        Ok(GridDistribution {
            g,
            n_labels: w.n_labels,
            values,
            cell_weight: h * h,
        })
    }

    pub fn get(&self, label: usize, i1: usize, i2: usize) -> f64 {
        self.values[(label * self.g + i2) * self.g + i1]
    }

    /// `int |f^l|^2 dmu` for one label.
    pub fn label_mass(&self, label: usize) -> f64 {
        let n = self.g * self.g;
        self.values[label * n..(label + 1) * n].iter().sum::<f64>() * self.cell_weight
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.n_labels).map(|l| self.label_mass(l)).sum()
    }
}

/// Probability of each grid cell under `p(x | l)`, integrated over the cell
/// with a 4x4 Gauss-Legendre rule and normalized to sum to one.
pub fn cell_probabilities(
    w: &FullWeight<Complex64>,
    map: &LocalFeatureMap,
    label: usize,
    g: usize,
) -> Result<Vec<f64>> {
    w.check_map(map)?;
    const NODES: usize = 4;
    let (t, tw) = gauss_legendre(NODES, 0.0, 1.0 / g as f64);
    // map vectors at every sub-node, per axis
    let mut phis = Vec::with_capacity(g * NODES);
    for i in 0..g {
        for &ti in &t {
            phis.push(map_local::<Complex64>(map, (i as f64 / g as f64 + ti).min(1.0))?);
        }
    }
    let mut mass = vec![0.0; g * g];
    for i2 in 0..g {
        for i1 in 0..g {
            let mut m = 0.0;
            for a in 0..NODES {
                for b in 0..NODES {
                    m += tw[a] * tw[b] * w.score(label, &phis[i1 * NODES + a], &phis[i2 * NODES + b]).norm_sqr();
                }
            }
            mass[i2 * g + i1] = m;
        }
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidArgument(format!("label {label} carries no probability")));
    }
    for m in &mut mass {
        *m /= total;
    }
    Ok(mass)
}

fn inverse_cdf(cumulative: &[f64], u: f64) -> usize {
    let target = u * cumulative.last().copied().unwrap_or(0.0);
    cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1)
}

fn cumsum(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    v.map(|x| {
        acc += x;
        acc
    })
    .collect()
}

/// Draws `n_s` labelled points from `p(l, x) = |f^l(x)|^2`: the label
/// first, then `x1` from the cell marginal, `x2` from the conditional, and
/// a uniform offset inside the chosen cell.
pub fn sample_points(
    w: &FullWeight<Complex64>,
    map: &LocalFeatureMap,
    n_s: usize,
    g: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    require_orthonormal(map)?;
    if g < MIN_GRID {
        return Err(Error::InvalidArgument(format!("grid {g} below the minimum of {MIN_GRID}")));
    }
    let probs = label_probabilities(w)?;
    let label_cdf = cumsum(probs.iter().copied());
    // per label: marginal cdf over i1 and conditional cdfs over i2
    let mut tables = Vec::with_capacity(w.n_labels);
    for (l, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            tables.push(None);
            continue;
        }
        let cells = cell_probabilities(w, map, l, g)?;
        let marginal = cumsum((0..g).map(|i1| (0..g).map(|i2| cells[i2 * g + i1]).sum()));
        let conditional: Vec<Vec<f64>> = (0..g).map(|i1| cumsum((0..g).map(|i2| cells[i2 * g + i1]))).collect();
        tables.push(Some((marginal, conditional)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n_s);
    let mut labels = Vec::with_capacity(n_s);
    let h = 1.0 / g as f64;
    for _ in 0..n_s {
        let mut l = inverse_cdf(&label_cdf, rng.random());
        while tables[l].is_none() {
            l -= 1;
        }
        let (marginal, conditional) = tables[l].as_ref().expect("label with mass");
        let i1 = inverse_cdf(marginal, rng.random());
        let i2 = inverse_cdf(&conditional[i1], rng.random());
        let x1 = ((i1 as f64 + rng.random::<f64>()) * h).min(1.0);
        let x2 = ((i2 as f64 + rng.random::<f64>()) * h).min(1.0);
        inputs.push(vec![x1, x2]);
        labels.push(l);
    }
    LabeledDataset::new(inputs, labels, w.n_labels, format!("born:g={g}:seed={seed}"))
}

/// `-sum_n log |f^{L_n}(x_n)|^2`.
pub fn nll_cost(w: &FullWeight<Complex64>, data: &EncodedPairs<Complex64>) -> f64 {
    (0..data.len())
        .map(|n| -w.score(data.labels[n], &data.phi1[n], &data.phi2[n]).norm_sqr().ln())
        .sum()
}

fn min_density(w: &FullWeight<Complex64>, data: &EncodedPairs<Complex64>) -> f64 {
    (0..data.len())
        .map(|n| w.score(data.labels[n], &data.phi1[n], &data.phi2[n]).norm_sqr())
        .fold(f64::INFINITY, f64::min)
}

/// Gradient of [`nll_cost`] as `dC/dRe W + i dC/dIm W`, which equals
/// `-2 sum_n conj(Phi_n) / conj(f_n)` on the label of each point.
pub fn nll_gradient(w: &FullWeight<Complex64>, data: &EncodedPairs<Complex64>) -> FullWeight<Complex64> {
    let d = w.d;
    let mut g = FullWeight::zeros(w.n_labels, d);
    for n in 0..data.len() {
        let l = data.labels[n];
        let (p1, p2) = (&data.phi1[n], &data.phi2[n]);
        let c = -2.0 / w.score(l, p1, p2).conj();
        let block = &mut g.data[l * d * d..(l + 1) * d * d];
        for s1 in 0..d {
            for s2 in 0..d {
                block[s1 * d + s2] += c * (p1[s1] * p2[s2]).conj();
            }
        }
    }
    g
}

/// Descent on the negative log-likelihood over the unit sphere. Each step
/// moves along the gradient component tangent to the sphere and then
/// renormalizes. A step that raises the cost, or sends some `|f^{L_n}|^2`
/// below 1e-300, is retried at half the rate.
pub fn train_full_nll(
    points: &LabeledDataset,
    map: &LocalFeatureMap,
    config: &ToyTrainConfig,
) -> Result<ToyTrainReport<Complex64>> {
    config.validate()?;
    require_orthonormal(map)?;
    let data = EncodedPairs::<Complex64>::new(points, map)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut w = gaussian_unit(points.n_labels, map.d(), config.seed)?;
    let step0 = config.rate / data.len() as f64;
    let mut step = step0;
    let mut cost = nll_cost(&w, &data);
    if !cost.is_finite() {
        return Err(Error::Divergence(format!("initial likelihood cost {cost}")));
    }
    let mut costs = vec![cost];
    let mut rejected = 0;
    for _ in 0..config.iters {
        let g = nll_gradient(&w, &data);
        let radial: f64 = w.data.iter().zip(&g.data).map(|(a, b)| (a.conj() * b).re).sum();
        let tangent: Vec<Complex64> = w.data.iter().zip(&g.data).map(|(a, b)| b - a * radial).collect();
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let mut trial = w.clone();
            for (t, g) in trial.data.iter_mut().zip(&tangent) {
                *t -= g * step;
            }
            trial.normalize()?;
            let c = nll_cost(&trial, &data);
            if min_density(&trial, &data) >= MIN_DENSITY && c.is_finite() && c <= cost {
                w = trial;
                cost = c;
                accepted = true;
                break;
            }
            step *= 0.5;
            rejected += 1;
        }
        if !accepted {
            break;
        }
        costs.push(cost);
        step = (2.0 * step).min(step0);
    }
    Ok(ToyTrainReport {
        weights: w,
        costs,
        rejected,
    })
}

/// `sum_l int p log(p / q) dmu` by the midpoint rule on a `g x g` grid.
/// Cells with `p < 1e-15` contribute nothing.
pub fn kl_divergence(
    w_true: &FullWeight<Complex64>,
    w_learned: &FullWeight<Complex64>,
    map: &LocalFeatureMap,
    g: usize,
) -> Result<f64> {
    require_orthonormal(map)?;
    check_normalized(w_true)?;
    check_normalized(w_learned)?;
    if w_true.n_labels != w_learned.n_labels || w_true.d != w_learned.d {
        return Err(Error::DimensionMismatch("weights of different shape".into()));
    }
    let p = GridDistribution::new(w_true, map, g)?;
    let q = GridDistribution::new(w_learned, map, g)?;
    let mut kl = 0.0;
    for (&a, &b) in p.values.iter().zip(&q.values) {
        if a >= 1e-15 {
            kl += a * (a / b).ln();
        }
    }
    Ok(kl * p.cell_weight)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlScanResult {
    pub sizes: Vec<usize>,
    pub mean_kl: Vec<f64>,
    pub std_kl: Vec<f64>,
    /// Least-squares `sigma` of `mean_kl ~ sigma / sqrt(N_s)`.
    pub sigma: f64,
    /// Root mean square residual of that fit.
    pub residual: f64,
}

impl KlScanResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "N_s,mean_kl,std_kl")?;
        for i in 0..self.sizes.len() {
            writeln!(w, "{},{},{}", self.sizes[i], self.mean_kl[i], self.std_kl[i])?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlScanConfig {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub g: usize,
    pub seed: u64,
    pub train: ToyTrainConfig,
}

impl Default for KlScanConfig {
    fn default() -> Self {
        KlScanConfig {
            sizes: vec![20, 100, 500, 2500],
            trials: 20,
            g: 128,
            seed: 0,
            train: ToyTrainConfig {
                iters: 500,
                rate: 1.0,
                seed: 0,
            },
        }
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One trial: fresh hidden model, samples, likelihood training, KL.
pub fn kl_trial(map: &LocalFeatureMap, n_s: usize, g: usize, train: &ToyTrainConfig, seed: u64) -> Result<f64> {
    let hidden = random_hidden_model(map.d(), mix_seed(seed, 1, 0))?;
    let points = sample_points(&hidden, map, n_s, g, mix_seed(seed, 2, 0))?;
    let cfg = ToyTrainConfig {
        seed: mix_seed(seed, 3, 0),
        ..train.clone()
    };
    let learned = train_full_nll(&points, map, &cfg)?.weights;
    kl_divergence(&hidden, &learned, map, g)
}

/// Least squares of `k ~ sigma / sqrt(N_s)` through the origin; returns
/// `sigma` and the root mean square residual.
pub fn fit_sigma(sizes: &[usize], kl: &[f64]) -> (f64, f64) {
    let x: Vec<f64> = sizes.iter().map(|&n| (n as f64).powf(-0.5)).collect();
    let sigma = x.iter().zip(kl).map(|(x, k)| x * k).sum::<f64>() / x.iter().map(|x| x * x).sum::<f64>();
    let residual = (x.iter().zip(kl).map(|(x, k)| (k - sigma * x).powi(2)).sum::<f64>() / x.len().max(1) as f64).sqrt();
    (sigma, residual)
}

pub fn kl_scan(map: &LocalFeatureMap, config: &KlScanConfig) -> Result<KlScanResult> {
    require_orthonormal(map)?;
    let sizes = &config.sizes;
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("sizes must be positive and increasing: {sizes:?}")));
    }
    if config.trials == 0 {
        return Err(Error::InvalidArgument("trials = 0".into()));
    }
    if config.g < MIN_GRID {
        return Err(Error::InvalidArgument(format!("grid {} below the minimum of {MIN_GRID}", config.g)));
    }
    let mut mean_kl = Vec::with_capacity(sizes.len());
    let mut std_kl = Vec::with_capacity(sizes.len());
    for (i, &n_s) in sizes.iter().enumerate() {
        let kls = (0..config.trials)
            .into_par_iter()
            .map(|t| kl_trial(map, n_s, config.g, &config.train, mix_seed(config.seed, i as u64 + 1, t as u64 + 1)))
            .collect::<Result<Vec<f64>>>()?;
        let n = kls.len() as f64;
        let mean = kls.iter().sum::<f64>() / n;
        let var = if kls.len() > 1 {
            kls.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean_kl.push(mean);
        std_kl.push(var.sqrt());
    }
    let (sigma, residual) = fit_sigma(sizes, &mean_kl);
    Ok(KlScanResult {
        sizes: sizes.clone(),
        mean_kl,
        std_kl,
        sigma,
        residual,
    })
}

#[cfg(test)]
mod tests;
