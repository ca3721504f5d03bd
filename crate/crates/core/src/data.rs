//! Dataset ingestion and synthesis.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{encode, EncodedInput, LocalFeatureMap};
use crate::scalar::Scalar;

pub const IDX_IMAGES: u32 = 2051;
pub const IDX_LABELS: u32 = 2049;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height * width != pixels.len() {
            return Err(Error::InvalidShape(format!(
                "{height}x{width} image with {} pixels",
                pixels.len()
            )));
        }
        Ok(RawImage { height, width, pixels })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdxData {
    Images(Vec<RawImage>),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Idx(format!("truncated header at byte {at}")))
}

/// Parses an IDX image (magic 2051) or label (magic 2049) stream. Gzip
/// input is detected by its magic bytes and inflated first.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut raw = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| Error::Idx(format!("gzip: {e}")))?;
        return parse_idx(&raw);
    }
    let magic = be_u32(bytes, 0)?;
    let count = be_u32(bytes, 4)? as usize;
    match magic {
        IDX_IMAGES => {
            let rows = be_u32(bytes, 8)? as usize;
            let cols = be_u32(bytes, 12)? as usize;
            let per = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Idx("image size overflows".into()))?;
            let need = count
                .checked_mul(per)
                .and_then(|v| v.checked_add(16))
                .ok_or_else(|| Error::Idx("payload size overflows".into()))?;
            if bytes.len() != need {
                return Err(Error::Idx(format!(
                    "expected {need} bytes for {count} images of {rows}x{cols}, got {}",
                    bytes.len()
                )));
            }
            let images = bytes[16..]
                .chunks_exact(per.max(1))
                .take(count)
                .map(|c| RawImage {
                    height: rows,
                    width: cols,
                    pixels: c.to_vec(),
                })
                .collect();
            Ok(IdxData::Images(images))
        }
        IDX_LABELS => {
            if bytes.len() != 8 + count {
                return Err(Error::Idx(format!(
                    "expected {} bytes for {count} labels, got {}",
                    8 + count,
                    bytes.len()
                )));
            }
            Ok(IdxData::Labels(bytes[8..].to_vec()))
        }
        m => Err(Error::Idx(format!("bad magic number {m}"))),
    }
}

/// Averages 2x2 blocks of a 28x28 image and scales to `[0, 1]`.
pub fn downsample(img: &RawImage) -> Result<Vec<f64>> {
    if img.height != 28 || img.width != 28 {
        return Err(Error::InvalidShape(format!(
            "downsampling expects 28x28, got {}x{}",
            img.height, img.width
        )));
    }
    let mut out = Vec::with_capacity(14 * 14);
    for r in 0..14 {
        for c in 0..14 {
            let p = |dr: usize, dc: usize| img.pixels[(2 * r + dr) * 28 + 2 * c + dc] as f64;
            let sum = p(0, 0) + p(0, 1) + p(1, 0) + p(1, 1);
            out.push(sum / 4.0 / 255.0);
        }
    }
    Ok(out)
}

/// Boustrophedon visiting order: even rows left to right, odd rows right to
/// left. `out[k]` is the row-major index of the `k`-th visited pixel.
pub fn snake_order(height: usize, width: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        if r % 2 == 0 {
            out.extend((0..width).map(|c| r * width + c));
        } else {
            out.extend((0..width).rev().map(|c| r * width + c));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_labels: usize,
    /// Permutation applied to every input, if any.
    pub ordering: Option<Vec<usize>>,
    pub source: String,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, n_labels: usize, source: impl Into<String>) -> Result<Self> {
        let ds = LabeledDataset {
            inputs,
            labels,
            n_labels,
            ordering: None,
            source: source.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs but {} labels",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        let n = self.inputs.first().map_or(0, Vec::len);
        for (i, x) in self.inputs.iter().enumerate() {
            if x.len() != n {
                return Err(Error::InvalidArgument(format!("input {i} has length {}, expected {n}", x.len())));
            }
            if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutOfDomain(*v));
            }
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.n_labels) {
            return Err(Error::InvalidArgument(format!("label {l} >= {}", self.n_labels)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn encode<T: Scalar>(&self, map: &LocalFeatureMap) -> Result<Vec<EncodedInput<T>>> {
        self.inputs
            .iter()
            .zip(&self.labels)
            .map(|(x, &l)| encode(x, map, Some(l)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (x, l) in self.inputs.iter().zip(&self.labels) {
            write!(w, "{l}")?;
            for v in x {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MnistOptions {
    pub split: Split,
    /// Stratified random subset size; `None` keeps everything.
    pub subset: Option<usize>,
    pub seed: u64,
    /// Average to 14x14 before ordering.
    pub downsample: bool,
}

impl Default for MnistOptions {
    fn default() -> Self {
        MnistOptions {
            split: Split::Train,
            subset: None,
            seed: 0,
            downsample: true,
        }
    }
}

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    let dotted = stem.replacen("-idx", ".idx", 1);
    for name in [stem.to_string(), format!("{stem}.gz"), dotted.clone(), format!("{dotted}.gz")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Io {
        path: dir.join(stem),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found (raw or .gz)"),
    })
}

fn read_idx(path: &Path) -> Result<IdxData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes).map_err(|e| Error::Idx(format!("{}: {e}", path.display())))
}

/// Indices of a uniform subset stratified by label: each class keeps a share
/// proportional to its size (largest remainder rounding).
pub fn stratified_subset(labels: &[usize], n_labels: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size == 0 {
        return Err(Error::InvalidArgument("subset size must be positive".into()));
    }
    if size > labels.len() {
        return Err(Error::InvalidArgument(format!(
            "subset of {size} requested from {} examples",
            labels.len()
        )));
    }
    let mut by_class = vec![Vec::new(); n_labels];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let total = labels.len() as f64;
    let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * size as f64 / total).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n_labels).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut short = size - take.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if short == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            short -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        out.extend_from_slice(&idx[..take[c]]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Loads an MNIST split from `dir`: parse, average to 14x14, snake order.
pub fn build_mnist(dir: &Path, opts: &MnistOptions) -> Result<LabeledDataset> {
    let prefix = match opts.split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = match read_idx(&find_idx(dir, &format!("{prefix}-images-idx3-ubyte"))?)? {
        IdxData::Images(v) => v,
        IdxData::Labels(_) => return Err(Error::Idx("image file holds labels".into())),
    };
    let labels = match read_idx(&find_idx(dir, &format!("{prefix}-labels-idx1-ubyte"))?)? {
        IdxData::Labels(v) => v,
        IdxData::Images(_) => return Err(Error::Idx("label file holds images".into())),
    };
    if images.len() != labels.len() {
        return Err(Error::Idx(format!("{} images but {} labels", images.len(), labels.len())));
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    if let Some(&l) = labels.iter().find(|&&l| l >= 10) {
        return Err(Error::Idx(format!("label {l} outside 0..10")));
    }
    let keep: Vec<usize> = match opts.subset {
        Some(size) => stratified_subset(&labels, 10, size, opts.seed)?,
        None => (0..labels.len()).collect(),
    };
    let (h, w) = if opts.downsample { (14, 14) } else { (28, 28) };
    let order = snake_order(h, w);
    let mut inputs = Vec::with_capacity(keep.len());
    for &i in &keep {
        let grid = if opts.downsample {
            downsample(&images[i])?
        } else {
            if images[i].height != 28 || images[i].width != 28 {
                return Err(Error::InvalidShape("expected 28x28 images".into()));
            }
            images[i].pixels.iter().map(|&p| p as f64 / 255.0).collect()
        };
        inputs.push(order.iter().map(|&k| grid[k]).collect());
    }
    let mut ds = LabeledDataset::new(
        inputs,
        keep.iter().map(|&i| labels[i]).collect(),
        10,
        format!("mnist:{}:{}", dir.display(), prefix),
    )?;
    ds.ordering = Some(order);
    Ok(ds)
}

type Mat2 = [[f64; 2]; 2];

/// `R(angle) diag(a, b) R(angle)^T`.
pub fn rotated_covariance(a: f64, b: f64, degrees: f64) -> Mat2 {
    let (s, c) = degrees.to_radians().sin_cos();
    [
        [c * c * a + s * s * b, c * s * (a - b)],
        [c * s * (a - b), s * s * a + c * c * b],
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianPairParams {
    pub mean_a: [f64; 2],
    pub mean_b: [f64; 2],
    pub cov_a: Mat2,
    pub cov_b: Mat2,
    pub n_per_class: usize,
}

impl Default for GaussianPairParams {
    fn default() -> Self {
        GaussianPairParams {
            mean_a: [0.7, 0.3],
            mean_b: [0.3, 0.7],
            cov_a: rotated_covariance(0.02, 0.04, 30.0),
            cov_b: rotated_covariance(0.05, 0.015, -20.0),
            n_per_class: 100,
        }
    }
}

fn check_spd(c: &Mat2, name: &str) -> Result<()> {
    let finite = c.iter().flatten().all(|v| v.is_finite());
    let sym = (c[0][1] - c[1][0]).abs() <= 1e-12 * (c[0][0].abs() + c[1][1].abs()).max(1e-300);
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    if !finite || !sym || c[0][0] <= 0.0 || det <= 0.0 {
        return Err(Error::NotSpd(format!("{name} = {c:?}")));
    }
    Ok(())
}

impl GaussianPairParams {
    pub fn validate(&self) -> Result<()> {
        check_spd(&self.cov_a, "cov_a")?;
        check_spd(&self.cov_b, "cov_b")
    }
}

fn cholesky(c: &Mat2) -> Mat2 {
    let l00 = c[0][0].sqrt();
    let l10 = c[1][0] / l00;
    let l11 = (c[1][1] - l10 * l10).sqrt();
    [[l00, 0.0], [l10, l11]]
}

/// Bivariate normal density.
pub fn gaussian_density(mean: &[f64; 2], cov: &Mat2, x: &[f64; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let (dx, dy) = (x[0] - mean[0], x[1] - mean[1]);
    // inverse of a 2x2 matrix
    let q = (cov[1][1] * dx * dx - 2.0 * cov[0][1] * dx * dy + cov[0][0] * dy * dy) / det;
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}

/// Draws per class by Cholesky-transformed normals, redrawing points that
/// fall outside the unit square. Labels: 0 for A, 1 for B.
pub fn sample_gaussian_pair(params: &GaussianPairParams, seed: u64) -> Result<LabeledDataset> {
    params.validate()?;
    const MAX_DRAWS: usize = 10_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(2 * params.n_per_class);
    let mut labels = Vec::with_capacity(2 * params.n_per_class);
    for (label, (mean, cov)) in [(&params.mean_a, &params.cov_a), (&params.mean_b, &params.cov_b)]
        .into_iter()
        .enumerate()
    {
        let l = cholesky(cov);
        let mut draws = 0;
        let mut kept = 0;
        while kept < params.n_per_class {
            draws += 1;
            if draws > MAX_DRAWS {
                return Err(Error::InvalidArgument(format!(
                    "class {label} puts almost no mass inside the unit square"
                )));
            }
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let x = [mean[0] + l[0][0] * z0, mean[1] + l[1][0] * z0 + l[1][1] * z1];
            if (0.0..=1.0).contains(&x[0]) && (0.0..=1.0).contains(&x[1]) {
                inputs.push(x.to_vec());
                labels.push(label);
                kept += 1;
            }
        }
    }
    LabeledDataset::new(inputs, labels, 2, format!("gaussian_pair:seed={seed}"))
}

/// Labels on a `g x g` grid of cell centres; `labels[i2 * g + i1]` is the
/// cell at `x1 = (i1 + 1/2) / g`, `x2 = (i2 + 1/2) / g`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    pub g: usize,
    pub labels: Vec<u8>,
}

impl LabelGrid {
    pub fn from_fn(g: usize, mut f: impl FnMut(f64, f64) -> u8) -> Self {
        let mut labels = Vec::with_capacity(g * g);
        for i2 in 0..g {
            for i1 in 0..g {
                labels.push(f((i1 as f64 + 0.5) / g as f64, (i2 as f64 + 0.5) / g as f64));
            }
        }
        LabelGrid { g, labels }
    }

    pub fn get(&self, i1: usize, i2: usize) -> u8 {
        self.labels[i2 * self.g + i1]
    }

    /// Fraction of cells on which two grids of equal size disagree.
    pub fn disagreement(&self, other: &LabelGrid) -> Result<f64> {
        if self.g != other.g {
            return Err(Error::DimensionMismatch(format!("grids {} and {}", self.g, other.g)));
        }
        let diff = self.labels.iter().zip(&other.labels).filter(|(a, b)| a != b).count();
        Ok(diff as f64 / self.labels.len().max(1) as f64)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x1,x2,label")?;
        for i2 in 0..self.g {
            for i1 in 0..self.g {
                let (x1, x2) = ((i1 as f64 + 0.5) / self.g as f64, (i2 as f64 + 0.5) / self.g as f64);
                writeln!(w, "{x1},{x2},{}", self.get(i1, i2))?;
            }
        }
        Ok(())
    }
}

/// Label of the larger density with equal priors; ties go to A (0).
pub fn bayes_boundary(params: &GaussianPairParams, g: usize) -> Result<LabelGrid> {
    params.validate()?;
    Ok(LabelGrid::from_fn(g, |x1, x2| {
        let pa = gaussian_density(&params.mean_a, &params.cov_a, &[x1, x2]);
        let pb = gaussian_density(&params.mean_b, &params.cov_b, &[x1, x2]);
        u8::from(pb > pa)
    }))
}

/// Two interlocked Archimedean arms `r = a + b theta` and its copy rotated
/// by pi, centred in the unit square. The bands between consecutive arms are
/// labelled alternately; the rule extends past `theta_max` to fill the
/// square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpiralParams {
    pub a: f64,
    pub b: f64,
    pub theta_max: f64,
    pub center: [f64; 2],
}

impl Default for SpiralParams {
    fn default() -> Self {
        let theta_max = 3.0 * std::f64::consts::PI;
        SpiralParams {
            a: 0.02,
            b: 0.48 / theta_max,
            theta_max,
            center: [0.5, 0.5],
        }
    }
}

impl SpiralParams {
    pub fn label(&self, x1: f64, x2: f64) -> usize {
        use std::f64::consts::{PI, TAU};
        let (dx, dy) = (x1 - self.center[0], x2 - self.center[1]);
        let r = dx.hypot(dy);
        let phi = dy.atan2(dx).rem_euclid(TAU);
        // unwrapped angle offset: arm 0 at t = 0 mod 2 pi, arm 1 at t = pi
        let t = (r - self.a) / self.b - phi;
        (t / PI).floor().rem_euclid(2.0) as usize
    }
}

pub fn spiral_label(x1: f64, x2: f64) -> usize {
    SpiralParams::default().label(x1, x2)
}

/// Uniform points of each region by rejection from the unit square.
pub fn spiral_dataset(n_per_class: usize, seed: u64, params: &SpiralParams) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class = [Vec::with_capacity(n_per_class), Vec::with_capacity(n_per_class)];
    while per_class.iter().any(|c| c.len() < n_per_class) {
        let x = [rng.random::<f64>(), rng.random::<f64>()];
        let l = params.label(x[0], x[1]);
        if per_class[l].len() < n_per_class {
            per_class[l].push(x.to_vec());
        }
    }
    let [a, b] = per_class;
    let labels = std::iter::repeat_n(0, a.len()).chain(std::iter::repeat_n(1, b.len())).collect();
    let inputs = a.into_iter().chain(b).collect();
    LabeledDataset::new(inputs, labels, 2, format!("spiral:seed={seed}"))
}
