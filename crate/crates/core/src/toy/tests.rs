use super::*;
use crate::data::{bayes_boundary, sample_gaussian_pair, GaussianPairParams};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn dataset(points: &[([f64; 2], usize)]) -> LabeledDataset {
    LabeledDataset::new(
        points.iter().map(|(x, _)| x.to_vec()).collect(),
        points.iter().map(|(_, l)| *l).collect(),
        2,
        "test",
    )
    .unwrap()
}

fn random_points(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<([f64; 2], usize)> = (0..n)
        .map(|_| ([rng.random(), rng.random()], rng.random_range(0..2)))
        .collect();
    dataset(&pts)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn quadratic_gradient_matches_finite_differences() {
    let map = LocalFeatureMap::spin_coherent(3).unwrap();
    let data = EncodedPairs::<f64>::new(&random_points(25, 1), &map).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = FullWeight::new(2, 3, (0..18).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
    let g = quadratic_gradient(&w, &data);
    let h = 1e-5;
    for i in 0..w.data.len() {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp.data[i] += h;
        wm.data[i] -= h;
        let fd = (quadratic_cost(&wp, &data) - quadratic_cost(&wm, &data)) / (2.0 * h);
        assert!(rel_err(fd, g.data[i]) < 1e-6, "entry {i}: fd {fd} vs {}", g.data[i]);
    }
}

#[test]
fn normal_equation_form_agrees_with_direct_sums() {
    let map = LocalFeatureMap::spin_coherent(4).unwrap();
    let data = EncodedPairs::<f64>::new(&random_points(40, 3), &map).unwrap();
    let form = QuadraticForm::new(&data, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = FullWeight::new(2, 4, (0..32).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
    let (c, g) = form.eval(&w.data);
    assert!(rel_err(c, quadratic_cost(&w, &data)) < 1e-12);
    for (a, b) in g.iter().zip(&quadratic_gradient(&w, &data).data) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn quadratic_training_fits_small_sets() {
    let cfg = ToyTrainConfig {
        iters: 500,
        ..Default::default()
    };
    let one = dataset(&[([0.3, 0.8], 1)]);
    let r = train_full_quadratic(&one, 2, &cfg).unwrap();
    assert_eq!(r.weights.predict(&LocalFeatureMap::half_angle(), [0.3, 0.8]).unwrap(), 1);

    let two = dataset(&[([0.0, 0.0], 0), ([1.0, 1.0], 1)]);
    let r = train_full_quadratic(&two, 2, &cfg).unwrap();
    assert_eq!(toy_error(&r.weights, &LocalFeatureMap::half_angle(), &two).unwrap(), 0.0);
    assert!(r.costs.windows(2).all(|c| c[1] <= c[0]));

    let again = train_full_quadratic(&two, 2, &cfg).unwrap();
    assert_eq!(r.weights, again.weights);
}

#[test]
fn quadratic_training_reports_divergence_and_bad_input() {
    let pts = dataset(&[([0.1, 0.2], 0)]);
    let bad = ToyTrainConfig {
        rate: f64::NAN,
        ..Default::default()
    };
    assert!(train_full_quadratic(&pts, 2, &bad).is_err());
    let three = LabeledDataset::new(vec![vec![0.1, 0.2, 0.3]], vec![0], 2, "t").unwrap();
    assert!(train_full_quadratic(&three, 2, &ToyTrainConfig::default()).is_err());
}

#[test]
fn decision_grid_follows_predict() {
    let map = LocalFeatureMap::spin_coherent(3).unwrap();
    let mut only_a = FullWeight::<f64>::zeros(2, 3);
    only_a.data[..9].iter_mut().for_each(|v| *v = 1.0);
    let grid = decision_grid(&only_a, &map, 16).unwrap();
    assert!(grid.labels.labels.iter().all(|&l| l == 0));

    let pts = random_points(30, 5);
    let w = train_full_quadratic(&pts, 3, &ToyTrainConfig::default()).unwrap().weights;
    let g = 32;
    let grid = decision_grid(&w, &map, g).unwrap();
    for i2 in 0..g {
        for i1 in 0..g {
            let x = [(i1 as f64 + 0.5) / g as f64, (i2 as f64 + 0.5) / g as f64];
            assert_eq!(grid.labels.get(i1, i2) as usize, w.predict(&map, x).unwrap());
            assert!(grid.margins[i2 * g + i1] >= 0.0);
        }
    }
    let mut csv = Vec::new();
    grid.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("x1,x2,label,margin\n"));
    assert_eq!(text.lines().count(), g * g + 1);
}

#[test]
fn higher_d_departs_further_from_the_bayes_boundary() {
    let params = GaussianPairParams::default();
    let bayes = bayes_boundary(&params, 64).unwrap();
    let area = |d: usize, seed: u64| {
        let pts = sample_gaussian_pair(&params, seed).unwrap();
        let w = train_full_quadratic(&pts, d, &ToyTrainConfig::default()).unwrap().weights;
        decision_grid(&w, &spin_map(d).unwrap(), 64).unwrap().labels.disagreement(&bayes).unwrap()
    };
    let mut low: Vec<f64> = (0..10).map(|s| area(2, s)).collect();
    let mut high: Vec<f64> = (0..10).map(|s| area(6, s)).collect();
    low.sort_by(f64::total_cmp);
    high.sort_by(f64::total_cmp);
    assert!(high[5] > low[5], "d=6 {high:?} vs d=2 {low:?}");
}

#[test]
fn hidden_models_are_normalized_and_reproducible() {
    let w = random_hidden_model(2, 9).unwrap();
    assert!((w.norm_sq() - 1.0).abs() < 1e-12);
    assert_eq!(w, random_hidden_model(2, 9).unwrap());
    assert_ne!(w, random_hidden_model(2, 10).unwrap());
    let p = label_probabilities(&w).unwrap();
    assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
}

#[test]
fn label_probabilities_edge_cases() {
    let mut a = FullWeight::<Complex64>::zeros(2, 2);
    a.data[1] = Complex64::new(0.0, 1.0);
    assert_eq!(label_probabilities(&a).unwrap(), vec![1.0, 0.0]);

    let mut even = FullWeight::<Complex64>::zeros(2, 2);
    even.data[0] = Complex64::new(0.5f64.sqrt(), 0.0);
    even.data[7] = Complex64::new(0.0, -(0.5f64.sqrt()));
    let p = label_probabilities(&even).unwrap();
    assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

    let mut loose = random_hidden_model(2, 1).unwrap();
    loose.data[0] += Complex64::new(1e-6, 0.0);
    assert!(matches!(label_probabilities(&loose), Err(Error::NotNormalized(_))));
}

#[test]
fn born_normalization_and_parseval_hold_on_the_grid() {
    let map = LocalFeatureMap::phase_modulated();
    for seed in 0..5 {
        let w = random_hidden_model(2, seed).unwrap();
        let grid = GridDistribution::new(&w, &map, 256).unwrap();
        assert!(grid.values.iter().all(|&v| v >= 0.0));
        assert!((grid.total_mass() - 1.0).abs() < 1e-6, "mass {}", grid.total_mass());
        let p = label_probabilities(&w).unwrap();
        for (l, p) in p.iter().enumerate() {
            assert!((grid.label_mass(l) - p).abs() < 1e-6);
        }
    }
}

#[test]
fn half_angle_density_is_not_normalized() {
    // the Born reading needs an orthonormal map; half_angle is not
    let mut w = FullWeight::<Complex64>::zeros(2, 2);
    w.data[0] = Complex64::new(1.0, 0.0);
    let grid = GridDistribution::new(&w, &LocalFeatureMap::half_angle(), 256).unwrap();
    assert!((grid.total_mass() - 0.25).abs() < 1e-4);
    assert!(sample_points(&w, &LocalFeatureMap::half_angle(), 10, 64, 0).is_err());
}

#[test]
fn sampler_with_one_label_only_emits_that_label() {
    let mut w = FullWeight::<Complex64>::zeros(2, 2);
    w.data[..4].copy_from_slice(&[Complex64::new(0.5, 0.0); 4]);
    let pts = sample_points(&w, &LocalFeatureMap::phase_modulated(), 500, 64, 3).unwrap();
    assert!(pts.labels.iter().all(|&l| l == 0));
    assert!(pts.inputs.iter().flatten().all(|x| (0.0..=1.0).contains(x)));
    assert!(sample_points(&w, &LocalFeatureMap::phase_modulated(), 10, 63, 0).is_err());
}

#[test]
fn sampled_labels_follow_their_probabilities() {
    let w = random_hidden_model(2, 4).unwrap();
    let n = 100_000;
    let pts = sample_points(&w, &LocalFeatureMap::phase_modulated(), n, 64, 11).unwrap();
    let pa = label_probabilities(&w).unwrap()[0];
    let freq = pts.labels.iter().filter(|&&l| l == 0).count() as f64 / n as f64;
    assert!((freq - pa).abs() < 4.0 * (pa * (1.0 - pa) / n as f64).sqrt(), "{freq} vs {pa}");
}

#[test]
fn sampled_points_pass_a_chi_square_test() {
    let map = LocalFeatureMap::phase_modulated();
    let w = random_hidden_model(2, 6).unwrap();
    let g = 64;
    let n = 100_000;
    let pts = sample_points(&w, &map, n, g, 12).unwrap();
    for label in 0..2 {
        let cells = cell_probabilities(&w, &map, label, g).unwrap();
        let mut counts = vec![0usize; g * g];
        for (x, &l) in pts.inputs.iter().zip(&pts.labels) {
            if l == label {
                let i1 = ((x[0] * g as f64) as usize).min(g - 1);
                let i2 = ((x[1] * g as f64) as usize).min(g - 1);
                counts[i2 * g + i1] += 1;
            }
        }
        let total = counts.iter().sum::<usize>() as f64;
        // pool the sparse cells into one bin so every expectation is >= 5
        let (mut chi2, mut bins) = (0.0, 0usize);
        let (mut pool_obs, mut pool_exp) = (0.0, 0.0);
        for (c, p) in counts.iter().zip(&cells) {
            let e = p * total;
            if e >= 5.0 {
                chi2 += (*c as f64 - e).powi(2) / e;
                bins += 1;
            } else {
                pool_obs += *c as f64;
                pool_exp += e;
            }
        }
        if pool_exp > 0.0 {
            chi2 += (pool_obs - pool_exp).powi(2) / pool_exp;
            bins += 1;
        }
        let dist = ChiSquared::new((bins - 1) as f64).unwrap();
        let p_value = 1.0 - dist.cdf(chi2);
        assert!(p_value > 0.01, "label {label}: chi2 {chi2} over {bins} bins, p = {p_value}");
    }
}

#[test]
fn cell_probabilities_match_the_fine_midpoint_rule() {
    let map = LocalFeatureMap::phase_modulated();
    let w = random_hidden_model(2, 8).unwrap();
    let cells = cell_probabilities(&w, &map, 1, 64).unwrap();
    let fine = GridDistribution::new(&w, &map, 512).unwrap();
    let mut coarse = vec![0.0; 64 * 64];
    for i2 in 0..512 {
        for i1 in 0..512 {
            coarse[(i2 / 8) * 64 + i1 / 8] += fine.get(1, i1, i2);
        }
    }
    let total: f64 = coarse.iter().sum();
    for (a, b) in cells.iter().zip(&coarse) {
        assert!((a - b / total).abs() < 1e-7);
    }
}

fn complex_points(n: usize, seed: u64) -> EncodedPairs<Complex64> {
    EncodedPairs::new(&random_points(n, seed), &LocalFeatureMap::phase_modulated()).unwrap()
}

#[test]
fn nll_gradient_matches_finite_differences() {
    let data = complex_points(20, 13);
    let w = random_hidden_model(2, 14).unwrap();
    let g = nll_gradient(&w, &data);
    let h = 1e-6;
    for i in 0..w.data.len() {
        for (unit, part) in [(Complex64::new(1.0, 0.0), g.data[i].re), (Complex64::new(0.0, 1.0), g.data[i].im)] {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp.data[i] += unit * h;
            wm.data[i] -= unit * h;
            let fd = (nll_cost(&wp, &data) - nll_cost(&wm, &data)) / (2.0 * h);
            assert!(rel_err(fd, part) < 1e-5, "entry {i} {unit}: fd {fd} vs {part}");
        }
    }
}

#[test]
fn nll_training_descends_and_is_reproducible() {
    let map = LocalFeatureMap::phase_modulated();
    let one = dataset(&[([0.4, 0.7], 1)]);
    let cfg = ToyTrainConfig {
        iters: 200,
        rate: 0.5,
        seed: 3,
    };
    let r = train_full_nll(&one, &map, &cfg).unwrap();
    assert!(r.costs.windows(2).all(|c| c[1] <= c[0]));
    assert!(r.costs.last().unwrap() < &r.costs[0]);
    assert!((r.weights.norm_sq() - 1.0).abs() < 1e-12);

    let hidden = random_hidden_model(2, 21).unwrap();
    let pts = sample_points(&hidden, &map, 300, 64, 22).unwrap();
    let a = train_full_nll(&pts, &map, &cfg).unwrap();
    let b = train_full_nll(&pts, &map, &cfg).unwrap();
    assert_eq!(a.weights, b.weights);
    assert!(kl_divergence(&hidden, &a.weights, &map, 128).unwrap() < kl_divergence(&hidden, &random_hidden_model(2, 3).unwrap(), &map, 128).unwrap());
    assert!(train_full_nll(&pts, &LocalFeatureMap::half_angle(), &cfg).is_err());
}

#[test]
fn kl_is_zero_on_identical_models_and_nonnegative_otherwise() {
    let map = LocalFeatureMap::phase_modulated();
    let a = random_hidden_model(2, 30).unwrap();
    assert!(kl_divergence(&a, &a, &map, 128).unwrap().abs() <= 1e-10);
    for seed in 31..36 {
        let b = random_hidden_model(2, seed).unwrap();
        assert!(kl_divergence(&a, &b, &map, 128).unwrap() >= -1e-10);
    }
}

#[test]
fn kl_quadrature_converges_under_grid_doubling() {
    let map = LocalFeatureMap::phase_modulated();
    for seed in 0..4 {
        let a = random_hidden_model(2, 100 + seed).unwrap();
        let b = random_hidden_model(2, 200 + seed).unwrap();
        let coarse = kl_divergence(&a, &b, &map, 256).unwrap();
        let fine = kl_divergence(&a, &b, &map, 512).unwrap();
        assert!((coarse - fine).abs() < 1e-4, "{coarse} vs {fine}");
    }
}

#[test]
fn kl_scan_is_reproducible_and_validates_sizes() {
    let map = LocalFeatureMap::phase_modulated();
    let cfg = KlScanConfig {
        sizes: vec![50],
        trials: 1,
        g: 64,
        seed: 5,
        train: ToyTrainConfig {
            iters: 50,
            rate: 1.0,
            seed: 0,
        },
    };
    let a = kl_scan(&map, &cfg).unwrap();
    let b = kl_scan(&map, &cfg).unwrap();
    assert_eq!(a.mean_kl[0].to_bits(), b.mean_kl[0].to_bits());
    assert!(a.mean_kl[0] >= 0.0);
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("N_s,mean_kl,std_kl\n50,"));
    assert!(kl_scan(&map, &KlScanConfig { g: 32, ..cfg.clone() }).is_err());
    for sizes in [vec![], vec![100, 100], vec![0, 5]] {
        let bad = KlScanConfig { sizes, ..cfg.clone() };
        assert!(kl_scan(&map, &bad).is_err());
    }
}

#[test]
fn sigma_fit_recovers_an_exact_power_law() {
    let sizes = [20usize, 100, 500, 2500];
    let k: Vec<f64> = sizes.iter().map(|&n| 0.7 / (n as f64).sqrt()).collect();
    let (sigma, residual) = fit_sigma(&sizes, &k);
    assert!((sigma - 0.7).abs() < 1e-14 && residual < 1e-15);
    // a 1/N law leaves a visible residual
    let k: Vec<f64> = sizes.iter().map(|&n| 1.0 / n as f64).collect();
    assert!(fit_sigma(&sizes, &k).1 > 1e-3);
}
