//! Two-site sweeping optimizer for the quadratic cost
//! `C = 1/2 sum_n sum_l |f^l(x_n) - delta^l_{L_n}|^2`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::EncodedInput;
use crate::mps::{argmax_abs, merge_pair, split_pair, BondTensor, Direction, MpsClassifier};
use crate::scalar::{Scalar, Strided, StridedMut};
use crate::svd::{SvdResult, TruncParams};
use crate::tensor::Tensor;

mod cache;
mod init;

pub use cache::{advance_cache, EnvironmentCache};
pub use init::init_from_data;

/// Step-size halvings tried before a bond update is rejected.
pub const MAX_HALVINGS: usize = 10;

/// Upper bound on the number of partial gradients per pass. Partition
/// boundaries depend only on the number of examples, so results do not
/// change with the thread count.
const MAX_PARTS: usize = 32;
const MIN_PART: usize = 64;

/// How the update direction at a bond is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalSolver {
    /// The raw gradient, divided according to [`StepScale`].
    Gradient,
    /// This many conjugate-gradient iterations on the local quadratic cost,
    /// started from the current bond tensor. The step is `alpha` times the
    /// difference, so `alpha = 1` takes the CG iterate itself.
    ConjugateGradient(usize),
}

/// Divisor applied to the raw gradient sum before the step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScale {
    /// `B += alpha dB / N_T`.
    Examples,
    /// `B += alpha dB / sum_n |Phi~_n|^2`. The divisor bounds the largest
    /// curvature of the local cost, so `alpha < 2` descends before truncation
    /// however small the projected inputs are.
    Trace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub solver: LocalSolver,
    /// Only used by [`LocalSolver::Gradient`].
    pub step_scale: StepScale,
    pub sweeps: usize,
    pub trunc: TruncParams,
    pub steps_per_bond: usize,
    pub backtracking: bool,
    /// Seed for the initial model when the trainer builds one.
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            solver: LocalSolver::ConjugateGradient(1),
            step_scale: StepScale::Trace,
            sweeps: 5,
            trunc: TruncParams::max_rank(10),
            steps_per_bond: 1,
            backtracking: true,
            seed: 0,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.sweeps == 0 {
            return Err(Error::InvalidArgument("sweeps must be positive".into()));
        }
        if self.steps_per_bond == 0 {
            return Err(Error::InvalidArgument("steps_per_bond must be at least 1".into()));
        }
        if self.solver == LocalSolver::ConjugateGradient(0) {
            return Err(Error::InvalidArgument("conjugate gradient needs at least one iteration".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        self.trunc.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BondStats {
    pub bond: usize,
    pub direction: String,
    pub gradient_norm: f64,
    pub cost_before: f64,
    /// Cost after the split, when the line search evaluated it.
    pub cost_after: Option<f64>,
    pub alpha: f64,
    pub accepted: bool,
    pub kept_rank: usize,
    pub discarded_weight: f64,
    /// Flops of the gradient pass, line search and split at this bond.
    pub flops: u64,
    pub svd_flops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sweep: usize,
    pub cost: f64,
    pub train_error: f64,
    pub bond_dims: Vec<usize>,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_error: Option<f64>,
    #[serde(skip)]
    pub bonds: Vec<BondStats>,
    #[serde(skip)]
    pub flops: u64,
}

fn check_data<T: Scalar>(model: &MpsClassifier<T>, data: &[EncodedInput<T>]) -> Result<()> {
    for (i, x) in data.iter().enumerate() {
        if x.n_sites() != model.n_sites() || x.d() != model.d() {
            return Err(Error::DimensionMismatch(format!(
                "example {i} has N = {}, d = {}; model has N = {}, d = {}",
                x.n_sites(),
                x.d(),
                model.n_sites(),
                model.d()
            )));
        }
        match x.label {
            Some(l) if l < model.n_labels() => {}
            Some(l) => {
                return Err(Error::InvalidArgument(format!(
                    "example {i} has label {l}, model has {} labels",
                    model.n_labels()
                )))
            }
            None => return Err(Error::InvalidArgument(format!("example {i} has no label"))),
        }
    }
    Ok(())
}

fn label_of<T>(x: &EncodedInput<T>) -> usize {
    x.label.expect("labels checked")
}

fn example_cost<T: Scalar>(f: &[T], label: usize) -> f64 {
    f.iter()
        .enumerate()
        .map(|(l, &v)| {
            let t = if l == label { T::one() } else { T::zero() };
            (v - t).abs_sq()
        })
        .sum::<f64>()
        / 2.0
}

fn part_len(n: usize) -> usize {
    n.div_ceil(MAX_PARTS).max(MIN_PART)
}

/// Cost summed over the training set by full contraction of each example.
pub fn quadratic_cost<T: Scalar>(model: &MpsClassifier<T>, data: &[EncodedInput<T>]) -> Result<f64> {
    check_data(model, data)?;
    let parts: Vec<Result<f64>> = data
        .par_chunks(part_len(data.len()))
        .map(|xs| {
            let mut c = 0.0;
            for x in xs {
                c += example_cost(&model.evaluate(x)?, label_of(x));
            }
            Ok(c)
        })
        .collect();
    parts.into_iter().sum()
}

/// Fraction of examples whose `argmax |f^l|` differs from the label.
pub fn error_rate<T: Scalar>(model: &MpsClassifier<T>, data: &[EncodedInput<T>]) -> Result<f64> {
    check_data(model, data)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let parts: Vec<Result<usize>> = data
        .par_chunks(part_len(data.len()))
        .map(|xs| {
            let mut wrong = 0;
            for x in xs {
                if model.predict(x)? != label_of(x) {
                    wrong += 1;
                }
            }
            Ok(wrong)
        })
        .collect();
    let wrong: usize = parts.into_iter().sum::<Result<usize>>()?;
    Ok(wrong as f64 / data.len() as f64)
}

pub fn form_bond_tensor<T: Scalar>(model: &MpsClassifier<T>, bond: usize) -> Result<BondTensor<T>> {
    model.bond_tensor(bond)
}

fn check_bond_fits<T: Scalar>(b: &BondTensor<T>, cache: &EnvironmentCache<T>) -> Result<()> {
    cache.check_bond(b.bond)?;
    if b.left_dim() != cache.left_dim() || b.right_dim() != cache.right_dim() {
        return Err(Error::CacheMismatch {
            cached: cache.bond(),
            requested: b.bond,
        });
    }
    Ok(())
}

/// `f^l(x_n) = sum B[a, s, t, b, l] L_n[a] phi_j[s] phi_{j+1}[t] R_n[b]`.
pub fn local_scores<T: Scalar>(
    b: &BondTensor<T>,
    cache: &EnvironmentCache<T>,
    n: usize,
    input: &EncodedInput<T>,
) -> Result<Vec<T>> {
    check_bond_fits(b, cache)?;
    if n >= cache.n_examples() {
        return Err(Error::IndexOutOfRange {
            index: n,
            order: cache.n_examples(),
        });
    }
    let j = b.bond;
    Ok(scores_one(
        &b.tensor,
        cache.left_env(n),
        input.vector(j),
        input.vector(j + 1),
        cache.right_env(n),
    ))
}

fn scores_one<T: Scalar>(b: &Tensor<T>, l: &[T], p: &[T], q: &[T], r: &[T]) -> Vec<T> {
    let sh = b.shape();
    let (ml, d, mr, nl) = (sh[0], sh[1], sh[3], sh[4]);
    let data = b.data();
    let mut f = vec![T::zero(); nl];
    for a in 0..ml {
        for s in 0..d {
            for t in 0..d {
                let w = l[a] * p[s] * q[t];
                if w == T::zero() {
                    continue;
                }
                let base = ((a * d + s) * d + t) * mr * nl;
                for (bi, &rb) in r.iter().enumerate() {
                    let wr = w * rb;
                    let row = &data[base + bi * nl..base + (bi + 1) * nl];
                    for (o, &v) in f.iter_mut().zip(row) {
                        *o += wr * v;
                    }
                }
            }
        }
    }
    f
}

/// Result of one pass over the training set at a bond.
#[derive(Clone, Debug)]
pub struct BondPass<T> {
    pub cost: f64,
    pub wrong: usize,
    /// `sum_n |Phi~_n|^2`.
    pub projected_norm_sq: f64,
    /// Raw `sum_n (delta - f) conj(Phi~_n)`, laid out like the bond tensor.
    pub gradient: Option<Tensor<T>>,
    pub flops: u64,
}

/// Scores, cost and optionally the gradient at the cache's bond.
pub fn bond_pass<T: Scalar>(
    b: &BondTensor<T>,
    data: &[EncodedInput<T>],
    cache: &EnvironmentCache<T>,
    with_gradient: bool,
) -> Result<BondPass<T>> {
    pass_impl(b, data, cache, with_gradient, true)
}

/// `sum_n f(x_n; D) conj(Phi~_n)`: the local cost's curvature applied to `D`.
pub fn curvature_product<T: Scalar>(
    d: &BondTensor<T>,
    data: &[EncodedInput<T>],
    cache: &EnvironmentCache<T>,
) -> Result<(Tensor<T>, u64)> {
    let pass = pass_impl(d, data, cache, true, false)?;
    Ok((pass.gradient.expect("requested").scale(-1.0), pass.flops))
}

fn pass_impl<T: Scalar>(
    b: &BondTensor<T>,
    data: &[EncodedInput<T>],
    cache: &EnvironmentCache<T>,
    with_gradient: bool,
    targets: bool,
) -> Result<BondPass<T>> {
    check_bond_fits(b, cache)?;
    if data.len() != cache.n_examples() {
        return Err(Error::DimensionMismatch(format!(
            "cache holds {} examples, got {}",
            cache.n_examples(),
            data.len()
        )));
    }
    let sh = b.tensor.shape().to_vec();
    let (ml, d, mr, nl) = (sh[0], sh[1], sh[3], sh[4]);
    let j = b.bond;
    let k = ml * d * d;
    let m = mr * nl;
    let bmat = b.tensor.data();
    let lblock = cache.left_block();
    let rblock = cache.right_block();
    let chunk = part_len(data.len());

    let parts: Vec<(f64, usize, f64, Option<Vec<T>>)> = data
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, xs)| {
            let c = xs.len();
            let first = ci * chunk;
            let mut p = vec![T::zero(); c * k];
            for (i, x) in xs.iter().enumerate() {
                let l = &lblock[(first + i) * ml..(first + i + 1) * ml];
                let (u, v) = (x.vector(j), x.vector(j + 1));
                let row = &mut p[i * k..(i + 1) * k];
                for a in 0..ml {
                    for s in 0..d {
                        let w = l[a] * u[s];
                        for t in 0..d {
                            row[(a * d + s) * d + t] = w * v[t];
                        }
                    }
                }
            }
            let mut y = vec![T::zero(); c * m];
            T::gemm(c, k, m, Strided::row_major(&p, k), Strided::row_major(bmat, m), StridedMut::row_major(&mut y, m));

            let mut cost = 0.0;
            let mut wrong = 0;
            let mut norm_sq = 0.0;
            let mut q = if with_gradient { vec![T::zero(); c * m] } else { Vec::new() };
            let mut f = vec![T::zero(); nl];
            for (i, x) in xs.iter().enumerate() {
                let r = &rblock[(first + i) * mr..(first + i + 1) * mr];
                let l = &lblock[(first + i) * ml..(first + i + 1) * ml];
                let sq = |v: &[T]| v.iter().map(|z| z.abs_sq()).sum::<f64>();
                norm_sq += sq(l) * sq(r) * sq(x.vector(j)) * sq(x.vector(j + 1));
                f.iter_mut().for_each(|v| *v = T::zero());
                for (bi, &rb) in r.iter().enumerate() {
                    for (o, &yv) in f.iter_mut().zip(&y[i * m + bi * nl..i * m + (bi + 1) * nl]) {
                        *o += yv * rb;
                    }
                }
                let label = label_of(x);
                cost += example_cost(&f, label);
                if argmax_abs(&f) != label {
                    wrong += 1;
                }
                if with_gradient {
                    let qrow = &mut q[i * m..(i + 1) * m];
                    for (bi, &rb) in r.iter().enumerate() {
                        let rc = rb.conj();
                        for (lab, &fl) in f.iter().enumerate() {
                            let t = if targets && lab == label { T::one() } else { T::zero() };
                            qrow[bi * nl + lab] = rc * (t - fl);
                        }
                    }
                }
            }
            let grad = with_gradient.then(|| {
                p.iter_mut().for_each(|v| *v = v.conj());
                let mut g = vec![T::zero(); k * m];
                T::gemm(k, c, m, Strided::transposed(&p, k), Strided::row_major(&q, m), StridedMut::row_major(&mut g, m));
                g
            });
            (cost, wrong, norm_sq, grad)
        })
        .collect();

    let n = data.len() as u64;
    let (k64, m64) = (k as u64, m as u64);
    let mut flops = n * k64 * 2 + 2 * n * k64 * m64 + 2 * n * m64;
    let mut cost = 0.0;
    let mut wrong = 0;
    let mut projected_norm_sq = 0.0;
    let mut gradient = with_gradient.then(|| vec![T::zero(); k * m]);
    for (c, w, nsq, g) in parts {
        cost += c;
        wrong += w;
        projected_norm_sq += nsq;
        if let (Some(acc), Some(g)) = (gradient.as_mut(), g) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    if with_gradient {
        flops += 2 * n * k64 * m64 + 2 * n * m64;
    }
    let gradient = match gradient {
        Some(g) => Some(Tensor::new(sh, g)?),
        None => None,
    };
    Ok(BondPass {
        cost,
        wrong,
        projected_norm_sq,
        gradient,
        flops,
    })
}

/// `dB = sum_n (delta^l_{L_n} - f^l(x_n)) conj(Phi~_n)`, the negative
/// gradient of the quadratic cost with respect to `conj(B)`.
pub fn gradient<T: Scalar>(b: &BondTensor<T>, data: &[EncodedInput<T>], cache: &EnvironmentCache<T>) -> Result<Tensor<T>> {
    Ok(bond_pass(b, data, cache, true)?.gradient.expect("requested"))
}

/// Approximately minimizes the local cost over the bond tensor, starting
/// from `b` with residual `g` (the raw negative gradient). Returns the
/// displacement from `b` and the flops spent.
pub fn conjugate_gradient<T: Scalar>(
    b: &BondTensor<T>,
    g: &Tensor<T>,
    data: &[EncodedInput<T>],
    cache: &EnvironmentCache<T>,
    iterations: usize,
) -> Result<(Tensor<T>, u64)> {
    let mut x = Tensor::zeros(g.shape());
    let mut r = g.clone();
    let mut p = g.clone();
    let mut rr = r.norm_sqr();
    let mut flops = 0;
    let tol = rr * 1e-24;
    for _ in 0..iterations {
        if rr <= tol || rr == 0.0 {
            break;
        }
        let (hp, f) = curvature_product(&BondTensor { tensor: p.clone(), bond: b.bond }, data, cache)?;
        flops += f;
        let php = p.inner(&hp)?.re();
        if !(php > 0.0 && php.is_finite()) {
            break;
        }
        let a = rr / php;
        x.axpy(T::from_real(a), &p)?;
        r.axpy(T::from_real(-a), &hp)?;
        let next = r.norm_sqr();
        let beta = next / rr;
        rr = next;
        let mut np = r.clone();
        np.axpy(T::from_real(beta), &p)?;
        p = np;
    }
    Ok((x, flops))
}

/// `B + step * dB`, split and written back into the model. Returns the SVD
/// of the split.
pub fn update_and_split<T: Scalar>(
    model: &mut MpsClassifier<T>,
    b: &BondTensor<T>,
    delta_b: &Tensor<T>,
    step: f64,
    trunc: &TruncParams,
    direction: Direction,
) -> Result<SvdResult<T>> {
    let mut t = b.tensor.clone();
    t.axpy(T::from_real(step), delta_b)?;
    model.split_bond(&BondTensor { tensor: t, bond: b.bond }, direction, trunc)
}

/// Outcome of a line-searched update at one bond.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub alpha: f64,
    pub accepted: bool,
    pub kept_rank: usize,
    pub discarded_weight: f64,
    /// Cost after the split; `None` when it was not evaluated.
    pub cost: Option<f64>,
    pub flops: u64,
    pub svd_flops: u64,
}

/// Updates the bond with `alpha / scale` times the gradient. With
/// backtracking the truncated result is accepted only if the cost does not
/// rise above `cost_before`; `alpha` is halved up to [`MAX_HALVINGS`]
/// times. If every trial fails, the cheapest of them and the truncated
/// unchanged bond is installed and the step reported as rejected.
#[allow(clippy::too_many_arguments)]
pub fn update_with_backtracking<T: Scalar>(
    model: &mut MpsClassifier<T>,
    b: &BondTensor<T>,
    delta_b: &Tensor<T>,
    cost_before: f64,
    scale: f64,
    data: &[EncodedInput<T>],
    cache: &EnvironmentCache<T>,
    config: &TrainConfig,
    direction: Direction,
) -> Result<StepOutcome> {
    let n = if scale > 0.0 { scale } else { 1.0 };
    let mut alpha = config.learning_rate;
    let mut flops = 0;
    let mut svd_flops = 0;
    if !config.backtracking {
        let res = update_and_split(model, b, delta_b, alpha / n, &config.trunc, direction)?;
        return Ok(StepOutcome {
            alpha,
            accepted: true,
            kept_rank: res.kept_rank,
            discarded_weight: res.discarded_weight,
            cost: None,
            flops: res.flops,
            svd_flops: res.flops,
        });
    }
    let mut best: Option<(f64, f64, Tensor<T>, Tensor<T>, SvdResult<T>)> = None;
    for _ in 0..=MAX_HALVINGS {
        let mut t = b.tensor.clone();
        t.axpy(T::from_real(alpha / n), delta_b)?;
        let (u, v, res) = split_pair(&t, direction, &config.trunc)?;
        svd_flops += res.flops;
        let trial = BondTensor {
            tensor: merge_pair(&u, &v, direction == Direction::Left)?,
            bond: b.bond,
        };
        let pass = bond_pass(&trial, data, cache, false)?;
        flops += pass.flops;
        if pass.cost <= cost_before {
            model.install_pair(b.bond, u, v, direction);
            return Ok(StepOutcome {
                alpha,
                accepted: true,
                kept_rank: res.kept_rank,
                discarded_weight: res.discarded_weight,
                cost: Some(pass.cost),
                flops: flops + svd_flops,
                svd_flops,
            });
        }
        if best.as_ref().is_none_or(|(c, ..)| pass.cost < *c) {
            best = Some((pass.cost, alpha, u, v, res));
        }
        alpha /= 2.0;
    }
    // Moving the label can raise the rank across the new cut, so even the
    // unchanged bond loses weight to truncation. Keep whichever of it and
    // the trials costs least.
    let (u, v, res) = split_pair(&b.tensor, direction, &config.trunc)?;
    svd_flops += res.flops;
    let pass = bond_pass(
        &BondTensor {
            tensor: merge_pair(&u, &v, direction == Direction::Left)?,
            bond: b.bond,
        },
        data,
        cache,
        false,
    )?;
    flops += pass.flops;
    let (cost, alpha, u, v, res) = match best {
        Some(t) if t.0 < pass.cost => t,
        _ => (pass.cost, 0.0, u, v, res),
    };
    model.install_pair(b.bond, u, v, direction);
    Ok(StepOutcome {
        alpha,
        accepted: false,
        kept_rank: res.kept_rank,
        discarded_weight: res.discarded_weight,
        cost: Some(cost),
        flops: flops + svd_flops,
        svd_flops,
    })
}

fn bond_steps<T: Scalar>(
    model: &mut MpsClassifier<T>,
    data: &[EncodedInput<T>],
    cache: &EnvironmentCache<T>,
    config: &TrainConfig,
    direction: Direction,
    stats: &mut Vec<BondStats>,
) -> Result<()> {
    let j = cache.bond();
    for _ in 0..config.steps_per_bond {
        let b = model.bond_tensor(j)?;
        let pass = bond_pass(&b, data, cache, true)?;
        let g = pass.gradient.expect("requested");
        let mut solve_flops = 0;
        let (step, scale) = match config.solver {
            LocalSolver::Gradient => {
                let scale = match config.step_scale {
                    StepScale::Examples => data.len() as f64,
                    StepScale::Trace => pass.projected_norm_sq,
                };
                (g.clone(), scale)
            }
            LocalSolver::ConjugateGradient(iters) => {
                let (x, f) = conjugate_gradient(&b, &g, data, cache, iters)?;
                solve_flops = f;
                (x, 1.0)
            }
        };
        let out = update_with_backtracking(model, &b, &step, pass.cost, scale, data, cache, config, direction)?;
        stats.push(BondStats {
            bond: j,
            direction: direction.name().to_string(),
            gradient_norm: g.frobenius_norm() / data.len().max(1) as f64,
            cost_before: pass.cost,
            cost_after: out.cost,
            alpha: out.alpha,
            accepted: out.accepted,
            kept_rank: out.kept_rank,
            discarded_weight: out.discarded_weight,
            flops: pass.flops + solve_flops + out.flops,
            svd_flops: out.svd_flops,
        });
    }
    Ok(())
}

/// One left-to-right pass over bonds `0..N-1` followed by a right-to-left
/// pass. The label is first moved to site 0 and every other site made
/// right-orthogonal.
pub fn sweep<T: Scalar>(
    model: &mut MpsClassifier<T>,
    data: &[EncodedInput<T>],
    config: &TrainConfig,
    index: usize,
) -> Result<SweepReport> {
    config.validate()?;
    check_data(model, data)?;
    let n = model.n_sites();
    if n < 2 {
        return Err(Error::InvalidArgument("sweeping needs at least two sites".into()));
    }
    let start = Instant::now();
    if model.label_site() != 0 {
        *model = model.move_label(0)?;
    }
    // the projected inputs are orthogonal projections only in this gauge
    model.orthogonalize()?;
    let mut cache = EnvironmentCache::new(model, data, 0)?;
    let mut stats = Vec::with_capacity(2 * (n - 1) * config.steps_per_bond);
    for j in 0..n - 1 {
        bond_steps(model, data, &cache, config, Direction::Right, &mut stats)?;
        if j + 2 < n {
            cache.advance(model, data, Direction::Right)?;
        }
    }
    for j in (0..n - 1).rev() {
        bond_steps(model, data, &cache, config, Direction::Left, &mut stats)?;
        if j > 0 {
            cache.advance(model, data, Direction::Left)?;
        }
    }
    // label is back on site 0 and the cache on bond 0: one exact pass
    let b = model.bond_tensor(0)?;
    let last = bond_pass(&b, data, &cache, false)?;
    let flops = stats.iter().map(|s| s.flops).sum::<u64>() + cache.flops() + last.flops;
    Ok(SweepReport {
        sweep: index,
        cost: last.cost,
        train_error: if data.is_empty() {
            0.0
        } else {
            last.wrong as f64 / data.len() as f64
        },
        bond_dims: model.bond_dims(),
        seconds: start.elapsed().as_secs_f64(),
        test_error: None,
        bonds: stats,
        flops,
    })
}

/// Runs `config.sweeps` sweeps, calling `on_sweep` after each one.
pub fn train<T: Scalar>(
    model: &mut MpsClassifier<T>,
    data: &[EncodedInput<T>],
    test: Option<&[EncodedInput<T>]>,
    config: &TrainConfig,
    mut on_sweep: impl FnMut(&SweepReport) -> Result<()> + Send,
) -> Result<Vec<SweepReport>> {
    config.validate()?;
    let mut run = |model: &mut MpsClassifier<T>| -> Result<Vec<SweepReport>> {
        let mut reports = Vec::with_capacity(config.sweeps);
        for s in 0..config.sweeps {
            let mut rep = sweep(model, data, config, s + 1)?;
            if !rep.cost.is_finite() {
                return Err(Error::Divergence(format!("cost became {} in sweep {}", rep.cost, s + 1)));
            }
            if let Some(t) = test {
                rep.test_error = Some(error_rate(model, t)?);
            }
            on_sweep(&rep)?;
            reports.push(rep);
        }
        Ok(reports)
    };
    match config.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            pool.install(|| run(model))
        }
        None => run(model),
    }
}
