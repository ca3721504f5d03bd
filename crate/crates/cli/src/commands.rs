use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::json;

use tnml::data::{
    bayes_boundary, build_mnist, sample_gaussian_pair, spiral_dataset, GaussianPairParams, LabeledDataset, MnistOptions,
    SpiralParams, Split,
};
use tnml::mps::scalar_kind_of;
use tnml::toy::{decision_grid, kl_scan, toy_error, train_full_quadratic, KlScanConfig, ToyTrainConfig};
use tnml::train::LocalSolver;
use tnml::{
    init_from_data, train, EncodedInput, LocalFeatureMap, MapKind, MpsClassifier, Scalar, ScalarKind, TrainConfig,
    TruncParams,
};

use crate::output::Outputs;
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn data_dir(dir: &Option<PathBuf>) -> Result<&Path> {
    dir.as_deref()
        .ok_or_else(|| usage("no data directory: pass --data-dir or set TNML_DATA_DIR"))
}

fn feature_map(kind: MapKind, d: usize) -> Result<LocalFeatureMap> {
    Ok(LocalFeatureMap::new(kind, d)?)
}

fn load_mnist(dir: &Path, split: Split, subset: Option<usize>, seed: u64) -> Result<LabeledDataset> {
    let opts = MnistOptions {
        split,
        subset,
        seed,
        ..MnistOptions::default()
    };
    build_mnist(dir, &opts).with_context(|| format!("loading MNIST from {}", dir.display()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Principal directions of the training inputs, site by site.
    Data,
    /// Uniform entries on [-0.5, 0.5], then normalized.
    Random,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Directory with the train-* IDX files.
    #[arg(long, env = "TNML_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Directory with the t10k-* IDX files; enables test error reports.
    #[arg(long)]
    pub test_dir: Option<PathBuf>,
    /// Output directory for model.mpsc, report.jsonl and config.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum bond dimension.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 3)]
    pub sweeps: usize,
    /// Relative discarded weight allowed at each split.
    #[arg(long, default_value_t = 0.0)]
    pub cutoff: f64,
    /// Step size alpha of the bond update.
    #[arg(long, default_value_t = 1.0)]
    pub learning_rate: f64,
    /// Conjugate gradient iterations per bond; 0 takes plain gradient steps.
    #[arg(long, default_value_t = 1)]
    pub cg_iters: usize,
    #[arg(long, default_value = "half_angle")]
    pub map: MapKind,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Stratified training subset size.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long)]
    pub test_subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Init::Data)]
    pub init: Init,
    /// Fixed-partition reductions. Always on; accepted for explicitness.
    #[arg(long)]
    pub deterministic: bool,
}

fn encode_all<T: Scalar>(ds: &LabeledDataset, map: &LocalFeatureMap) -> Result<Vec<EncodedInput<T>>> {
    Ok(ds.encode::<T>(map)?)
}

pub fn mnist_train(args: &TrainArgs, threads: Option<usize>) -> Result<()> {
    let dir = data_dir(&args.data_dir)?;
    let map = feature_map(args.map, args.d)?;
    if args.m == 0 {
        return Err(usage("--m must be positive"));
    }
    let config = TrainConfig {
        learning_rate: args.learning_rate,
        solver: match args.cg_iters {
            0 => LocalSolver::Gradient,
            k => LocalSolver::ConjugateGradient(k),
        },
        sweeps: args.sweeps,
        trunc: TruncParams::new(args.m, args.cutoff, 1)?,
        seed: args.seed,
        threads,
        ..TrainConfig::default()
    };
    config.validate()?;
    let train_set = load_mnist(dir, Split::Train, args.subset, args.seed)?;
    let test_set = match &args.test_dir {
        Some(t) => Some(load_mnist(t, Split::Test, args.test_subset, args.seed)?),
        None => None,
    };
    let resolved = json!({
        "command": "mnist-train",
        "args": args,
        "data_dir": dir,
        "map": map.kind().name(),
        "train_examples": train_set.len(),
        "test_examples": test_set.as_ref().map(|t| t.len()),
        "train_config": config,
    });
    let (model_bytes, report) = match map.scalar_kind() {
        ScalarKind::Real => run_training::<f64>(&train_set, test_set.as_ref(), &map, args, &config)?,
        ScalarKind::Complex => run_training::<Complex64>(&train_set, test_set.as_ref(), &map, args, &config)?,
    };
    let mut out = Outputs::default();
    out.add(args.out.join("model.mpsc"), model_bytes);
    out.add(args.out.join("report.jsonl"), report);
    out.add_json(args.out.join("config.json"), &resolved)?;
    out.commit()
}

fn run_training<T: Scalar>(
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    map: &LocalFeatureMap,
    args: &TrainArgs,
    config: &TrainConfig,
) -> Result<(Vec<u8>, Vec<u8>)> {
    let data = encode_all::<T>(train_set, map)?;
    let test = test_set.map(|t| encode_all::<T>(t, map)).transpose()?;
    let n_sites = train_set.n_features();
    let mut model = match args.init {
        Init::Data => init_from_data(*map, train_set.n_labels, args.m, &data, args.seed)?,
        Init::Random => MpsClassifier::init_random(n_sites, *map, train_set.n_labels, args.m, args.seed)?,
    };
    let mut report = Vec::new();
    train(&mut model, &data, test.as_deref(), config, |r| {
        eprintln!(
            "sweep {}: cost/N {:.5} train error {:.4}{} ({:.1}s)",
            r.sweep,
            r.cost / data.len() as f64,
            r.train_error,
            r.test_error.map(|e| format!(" test error {e:.4}")).unwrap_or_default(),
            r.seconds
        );
        report.extend(serde_json::to_vec(r).expect("report serializes"));
        report.push(b'\n');
        Ok(())
    })?;
    Ok((model.to_bytes(), report))
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, env = "TNML_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Expected map; refuses a model built with another.
    #[arg(long)]
    pub map: Option<MapKind>,
    /// Expected local dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Write metrics here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Serialize)]
pub struct Metrics {
    pub examples: usize,
    pub error_rate: f64,
    pub misclassified_count: usize,
    /// `confusion_matrix[true][predicted]`.
    pub confusion_matrix: Vec<Vec<usize>>,
}

pub fn evaluate<T: Scalar>(model: &MpsClassifier<T>, data: &[EncodedInput<T>]) -> Result<Metrics> {
    let nl = model.n_labels();
    let mut confusion = vec![vec![0usize; nl]; nl];
    let mut wrong = 0;
    for x in data {
        let truth = x.label.context("example without a label")?;
        if truth >= nl {
            return Err(usage(format!("label {truth} outside the model's {nl} labels")));
        }
        let p = model.predict(x)?;
        confusion[truth][p] += 1;
        if p != truth {
            wrong += 1;
        }
    }
    Ok(Metrics {
        examples: data.len(),
        error_rate: if data.is_empty() { 0.0 } else { wrong as f64 / data.len() as f64 },
        misclassified_count: wrong,
        confusion_matrix: confusion,
    })
}

fn read_model(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn mnist_eval(args: &EvalArgs) -> Result<()> {
    let bytes = read_model(&args.model)?;
    let dir = data_dir(&args.data_dir)?;
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let metrics = match scalar_kind_of(&bytes)? {
        ScalarKind::Real => eval_bytes::<f64>(&bytes, dir, split, args)?,
        ScalarKind::Complex => eval_bytes::<Complex64>(&bytes, dir, split, args)?,
    };
    emit_json(&args.out, &metrics)
}

fn eval_bytes<T: Scalar>(bytes: &[u8], dir: &Path, split: Split, args: &EvalArgs) -> Result<Metrics> {
    let model = MpsClassifier::<T>::from_bytes(bytes)?;
    let map = *model.map();
    if args.map.is_some_and(|k| k != map.kind()) || args.d.is_some_and(|d| d != map.d()) {
        return Err(usage(format!(
            "model uses the {} map with d = {}, flags ask for {:?} with d = {:?}",
            map.kind().name(),
            map.d(),
            args.map.map(|k| k.name()),
            args.d
        )));
    }
    let ds = load_mnist(dir, split, args.subset, args.seed)?;
    if ds.n_features() != model.n_sites() {
        return Err(usage(format!("model has {} sites, data has {} pixels", model.n_sites(), ds.n_features())));
    }
    evaluate(&model, &encode_all::<T>(&ds, &map)?)
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    match out {
        Some(path) => {
            let mut o = Outputs::default();
            o.add_json(path, value)?;
            o.commit()
        }
        None => {
            use std::io::Write;
            let mut text = serde_json::to_vec_pretty(value)?;
            text.push(b'\n');
            match std::io::stdout().lock().write_all(&text) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Two overlapping Gaussians, compared with the Bayes boundary.
    Gaussians,
    /// Two interlocked spiral regions.
    Spiral,
}

#[derive(Args, Debug, Serialize)]
pub struct ToyArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    /// Local dimension of the spin-coherent map.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Total number of training points, split evenly (default 200 for
    /// gaussians, 500 for spiral).
    #[arg(long)]
    pub n: Option<usize>,
    /// Gradient steps (default 2000 for gaussians, 1000000 for spiral).
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Decision grid resolution.
    #[arg(long, default_value_t = 128)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn points_csv(ds: &LabeledDataset) -> Vec<u8> {
    let mut s = String::from("x1,x2,label\n");
    for (x, l) in ds.inputs.iter().zip(&ds.labels) {
        s.push_str(&format!("{},{},{l}\n", x[0], x[1]));
    }
    s.into_bytes()
}

pub fn toy(args: &ToyArgs) -> Result<()> {
    if args.d < 2 {
        return Err(usage(format!("--d must be at least 2, got {}", args.d)));
    }
    if args.grid == 0 {
        return Err(usage("--grid must be positive"));
    }
    let (default_n, default_iters) = match args.task {
        Task::Gaussians => (200, 2000),
        Task::Spiral => (500, 1_000_000),
    };
    let n = args.n.unwrap_or(default_n);
    if n < 2 {
        return Err(usage("--n must be at least 2"));
    }
    let cfg = ToyTrainConfig {
        iters: args.iters.unwrap_or(default_iters),
        rate: args.rate,
        seed: args.seed,
    };
    let gaussians = GaussianPairParams {
        n_per_class: n / 2,
        ..GaussianPairParams::default()
    };
    let points = match args.task {
        Task::Gaussians => sample_gaussian_pair(&gaussians, args.seed)?,
        Task::Spiral => spiral_dataset(n / 2, args.seed, &SpiralParams::default())?,
    };
    let map = if args.d == 2 {
        LocalFeatureMap::half_angle()
    } else {
        LocalFeatureMap::spin_coherent(args.d)?
    };
    let start = Instant::now();
    let report = train_full_quadratic(&points, args.d, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let grid = decision_grid(&report.weights, &map, args.grid)?;
    let accuracy = 1.0 - toy_error(&report.weights, &map, &points)?;
    let mut metrics = json!({
        "task": args.task,
        "d": args.d,
        "n": points.len(),
        "training_accuracy": accuracy,
        "final_cost": report.costs.last(),
        "accepted_steps": report.costs.len() - 1,
        "rejected_steps": report.rejected,
    });
    let mut out = Outputs::default();
    if args.task == Task::Gaussians {
        let bayes = bayes_boundary(&gaussians, args.grid)?;
        metrics["bayes_disagreement"] = json!(grid.labels.disagreement(&bayes)?);
        let mut csv = Vec::new();
        bayes.write_csv(&mut csv)?;
        out.add(args.out.join("bayes.csv"), csv);
    }
    eprintln!("training accuracy {accuracy:.4} ({seconds:.1}s)");
    let mut csv = Vec::new();
    grid.write_csv(&mut csv)?;
    out.add(args.out.join("grid.csv"), csv);
    out.add(args.out.join("points.csv"), points_csv(&points));
    out.add_json(args.out.join("metrics.json"), &metrics)?;
    out.add_json(
        args.out.join("config.json"),
        &json!({"command": "toy", "args": args, "train": cfg, "gaussians": gaussians, "spiral": SpiralParams::default()}),
    )?;
    out.commit()
}

#[derive(Args, Debug, Serialize)]
pub struct GenerativeArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [20usize, 100, 500, 2500])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Grid resolution for sampling and for the KL quadrature (at least 64).
    #[arg(long, default_value_t = 128)]
    pub grid: usize,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn generative(args: &GenerativeArgs) -> Result<()> {
    let config = KlScanConfig {
        sizes: args.sizes.clone(),
        trials: args.trials,
        g: args.grid,
        seed: args.seed,
        train: ToyTrainConfig {
            iters: args.iters,
            rate: args.rate,
            seed: 0,
        },
    };
    let result = kl_scan(&LocalFeatureMap::phase_modulated(), &config)?;
    for (n, k) in result.sizes.iter().zip(&result.mean_kl) {
        eprintln!("N_s = {n}: mean KL {k:.6}");
    }
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    let mut out = Outputs::default();
    out.add(args.out.join("kl_scan.csv"), csv);
    out.add_json(args.out.join("fit.json"), &result)?;
    out.add_json(args.out.join("config.json"), &json!({"command": "generative", "args": args, "scan": config}))?;
    out.commit()
}

#[derive(Args, Debug, Serialize)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub n_sites: usize,
    pub d: usize,
    pub n_labels: usize,
    pub map: &'static str,
    pub scalar: &'static str,
    pub label_site: usize,
    pub bond_dims: Vec<usize>,
    pub n_parameters: usize,
    pub norm: f64,
    /// Spectrum across each bond after bringing the model to canonical form.
    pub singular_values: Vec<Vec<f64>>,
}

pub fn summarize<T: Scalar>(model: &MpsClassifier<T>) -> Result<Summary> {
    let n = model.n_sites();
    let mut singular_values = Vec::with_capacity(n.saturating_sub(1));
    if n > 1 {
        let mut c = model.canonicalize(1)?;
        for bond in 0..n - 1 {
            singular_values.push(c.core_spectrum()?);
            if bond + 2 < n {
                c.shift_core_right()?;
            }
        }
    }
    Ok(Summary {
        n_sites: n,
        d: model.d(),
        n_labels: model.n_labels(),
        map: model.map().kind().name(),
        scalar: T::KIND.name(),
        label_site: model.label_site(),
        bond_dims: model.bond_dims(),
        n_parameters: model.n_parameters(),
        norm: model.norm(),
        singular_values,
    })
}

pub fn inspect(args: &InspectArgs) -> Result<()> {
    let bytes = read_model(&args.model)?;
    let summary = match scalar_kind_of(&bytes)? {
        ScalarKind::Real => summarize(&MpsClassifier::<f64>::from_bytes(&bytes)?)?,
        ScalarKind::Complex => summarize(&MpsClassifier::<Complex64>::from_bytes(&bytes)?)?,
    };
    emit_json(&args.out, &summary)
}
