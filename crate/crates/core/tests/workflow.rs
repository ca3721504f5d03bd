use num_complex::Complex64;
use tnml::data::{sample_gaussian_pair, GaussianPairParams, LabeledDataset};
use tnml::mps::{load, save};
use tnml::train::error_rate;
use tnml::{
    init_from_data, train, train_full_quadratic, EncodedInput, LocalFeatureMap, MpsClassifier, Scalar, ToyTrainConfig,
    TrainConfig, TruncParams,
};

/// Three classes of 16-pixel "images": a bright run whose position depends
/// on the label, plus a little deterministic noise.
fn bars(n: usize) -> LabeledDataset {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = i % 3;
        let x = (0..16)
            .map(|k| {
                let noise = ((i * 7 + k * 13) % 11) as f64 / 40.0;
                if k / 5 == label { 1.0 - noise } else { noise }
            })
            .collect();
        inputs.push(x);
        labels.push(label);
    }
    LabeledDataset::new(inputs, labels, 3, "bars").unwrap()
}

fn fit<T: Scalar>(map: LocalFeatureMap) -> (MpsClassifier<T>, Vec<EncodedInput<T>>, Vec<f64>) {
    let data = bars(90).encode::<T>(&map).unwrap();
    let mut model = init_from_data(map, 3, 4, &data, 2).unwrap();
    let config = TrainConfig { sweeps: 3, trunc: TruncParams::max_rank(4), ..TrainConfig::default() };
    let reports = train(&mut model, &data, None, &config, |_| Ok(())).unwrap();
    (model, data, reports.iter().map(|r| r.train_error).collect())
}

#[test]
fn real_model_learns_and_survives_a_round_trip() {
    let (model, data, errors) = fit::<f64>(LocalFeatureMap::half_angle());
    assert_eq!(*errors.last().unwrap(), 0.0, "{errors:?}");
    assert!(model.bond_dims().iter().all(|&m| m <= 4));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bars.mpsc");
    save(&model, &path).unwrap();
    let back: MpsClassifier<f64> = load(&path).unwrap();
    assert_eq!(back.to_bytes(), model.to_bytes());
    for x in &data {
        assert_eq!(back.evaluate(x).unwrap(), model.evaluate(x).unwrap());
    }
    assert!(load::<Complex64>(&path).is_err());
}

#[test]
fn complex_model_learns_with_the_phase_map() {
    let (model, data, errors) = fit::<Complex64>(LocalFeatureMap::phase_modulated());
    assert!(*errors.last().unwrap() <= 0.05, "{errors:?}");
    assert_eq!(error_rate(&model, &data).unwrap(), *errors.last().unwrap());
}

#[test]
fn toy_quadratic_fit_beats_chance_on_gaussians() {
    let points = sample_gaussian_pair(&GaussianPairParams::default(), 11).unwrap();
    let report = train_full_quadratic(&points, 2, &ToyTrainConfig::default()).unwrap();
    assert!(report.costs.windows(2).all(|c| c[1] <= c[0]));
    let map = LocalFeatureMap::half_angle();
    let wrong = (0..points.len())
        .filter(|&i| {
            let x = [points.inputs[i][0], points.inputs[i][1]];
            report.weights.predict(&map, x).unwrap() != points.labels[i]
        })
        .count();
    assert!((wrong as f64) < 0.35 * points.len() as f64, "{wrong} of {}", points.len());
}
