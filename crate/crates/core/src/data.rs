//! Datasets: synthetic Gaussian mixtures, IDX and CSV loaders, the
//! validation/test split and parametric corruptions.

use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{MisdError, Result};
use crate::rng::{self, stream, stream_rng};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Scale from raw mixture coordinates (unit noise) into the `[0, 1]` input box.
/// Default input-space scale of one noise standard deviation.
pub const MIXTURE_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    /// Bounds shared by every feature.
    pub input_range: (f64, f64),
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
        input_range: (f64, f64),
    ) -> Result<Self> {
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(MisdError::Dimension(format!(
                "{} labels and {} values do not form rows of width {dim}",
                labels.len(),
                inputs.len()
            )));
        }
        if num_classes < 2 {
            return Err(MisdError::Parameter("need at least two classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(MisdError::Parameter(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        let (lo, hi) = input_range;
        if !(lo < hi) {
            return Err(MisdError::Parameter(format!("bad input range ({lo}, {hi})")));
        }
        if inputs.iter().any(|v| !v.is_finite() || *v < lo || *v > hi) {
            return Err(MisdError::Parameter(format!(
                "inputs must be finite and within [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            labels,
            dim,
            num_classes,
            input_range,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn range_width(&self) -> f64 {
        self.input_range.1 - self.input_range.0
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            name: self.name.clone(),
            inputs,
            labels,
            dim: self.dim,
            num_classes: self.num_classes,
            input_range: self.input_range,
        }
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.input_range.0, self.input_range.1)
    }

    /// Writes `label,f0,f1,...` CSV.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("label");
        for j in 0..self.dim {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for v in self.input(i) {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| MisdError::io(path, e))
    }
}

/// Isotropic Gaussian clusters, one per class, with centers fixed by a seed.
///
/// Raw samples are `center_k + N(0, I)`, centers drawn from
/// `N(0, separation^2 / d * I)` so the typical distance between two centers
/// is about `separation * sqrt(2)` noise standard deviations. Raw coordinates
/// are mapped into the centered range `[-1, 1]` by `scale * raw` and clipped
/// (`scale` defaults to [`MIXTURE_SCALE`]).
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    pub dim: usize,
    pub num_classes: usize,
    pub separation: f64,
    pub scale: f64,
    centers: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(dim: usize, num_classes: usize, separation: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(MisdError::Parameter("dimension must be at least 1".into()));
        }
        if num_classes < 2 {
            return Err(MisdError::Parameter("need at least two classes".into()));
        }
        if !(separation > 0.0 && separation.is_finite()) {
            return Err(MisdError::Parameter(format!(
                "separation must be positive, got {separation}"
            )));
        }
        let mut rng = stream_rng(seed, stream::CENTERS);
        let normal = Normal::new(0.0, separation / (dim as f64).sqrt()).expect("positive std");
        let centers = (0..dim * num_classes).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            dim,
            num_classes,
            separation,
            scale: MIXTURE_SCALE,
            centers,
        })
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(MisdError::Parameter(format!("scale must be positive, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n < self.num_classes {
            return Err(MisdError::Parameter(format!(
                "need at least {} examples, got {n}",
                self.num_classes
            )));
        }
        let mut rng = rng::StreamRng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut inputs = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % self.num_classes;
            let c = &self.centers[y * self.dim..(y + 1) * self.dim];
            for &cj in c {
                let raw = cj + normal.sample(&mut rng);
                inputs.push((self.scale * raw).clamp(-1.0, 1.0));
            }
            labels.push(y);
        }
        Dataset::new(
            format!("gaussian_mixture(d={},k={},sep={})", self.dim, self.num_classes, self.separation),
            inputs,
            labels,
            self.dim,
            self.num_classes,
            (-1.0, 1.0),
        )
    }
}

pub fn make_gaussian_mixture(
    n: usize,
    dim: usize,
    num_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    GaussianMixture::new(dim, num_classes, separation, seed)?.sample(n, rng::derive_seed(seed, stream::DATA_TRAIN))
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| MisdError::Format {
            offset: offset as u64,
            message: "file truncated inside header".into(),
        })
}

/// Parses IDX image and label buffers. Pixels are scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32_be(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(MisdError::Format {
            offset: 0,
            message: format!("image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let n = read_u32_be(images, 4)? as usize;
    let rows = read_u32_be(images, 8)? as usize;
    let cols = read_u32_be(images, 12)? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(MisdError::Format {
            offset: 8,
            message: "image dimensions must be positive".into(),
        });
    }
    let pixels = &images[16..];
    if pixels.len() < n * dim {
        return Err(MisdError::Format {
            offset: (16 + pixels.len()) as u64,
            message: format!("expected {} pixel bytes, found {}", n * dim, pixels.len()),
        });
    }

    let lmagic = read_u32_be(labels, 0)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(MisdError::Format {
            offset: 0,
            message: format!("label magic 0x{lmagic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        });
    }
    let nl = read_u32_be(labels, 4)? as usize;
    if nl != n {
        return Err(MisdError::Format {
            offset: 4,
            message: format!("{n} images but {nl} labels"),
        });
    }
    let lbytes = &labels[8..];
    if lbytes.len() < n {
        return Err(MisdError::Format {
            offset: (8 + lbytes.len()) as u64,
            message: format!("expected {n} label bytes, found {}", lbytes.len()),
        });
    }
    if n == 0 {
        return Err(MisdError::Format {
            offset: 4,
            message: "empty IDX file".into(),
        });
    }
    let inputs = pixels[..n * dim].iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = lbytes[..n].iter().map(|&l| l as usize).collect();
    let num_classes = (labels.iter().max().copied().unwrap_or(0) + 1).max(2);
    Dataset::new("idx", inputs, labels, dim, num_classes, (0.0, 1.0))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| MisdError::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| MisdError::io(labels_path, e))?;
    let mut ds = parse_idx(&images, &labels)?;
    ds.name = images_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(ds)
}

/// Loads `label,f0,f1,...` CSV. The input range is `[0, 1]` when every value
/// fits, otherwise the observed minimum and maximum.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.get(0) != Some("label") || headers.len() < 2 {
        return Err(MisdError::Format {
            offset: 0,
            message: "CSV header must be `label,f0,f1,...`".into(),
        });
    }
    let dim = headers.len() - 1;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let offset = record.position().map(|p| p.byte()).unwrap_or(0);
        let row = labels.len() + 1;
        let bad = |what: &str| MisdError::Format {
            offset,
            message: format!("bad {what} in row {row}"),
        };
        labels.push(record[0].trim().parse::<usize>().map_err(|_| bad("label"))?);
        for field in record.iter().skip(1) {
            inputs.push(field.trim().parse::<f64>().map_err(|_| bad("feature"))?);
        }
    }
    if labels.is_empty() {
        return Err(MisdError::Format {
            offset: 0,
            message: "CSV has no rows".into(),
        });
    }
    let lo = inputs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = inputs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if lo >= 0.0 && hi <= 1.0 { (0.0, 1.0) } else { (lo, if hi > lo { hi } else { lo + 1.0 }) };
    let num_classes = (labels.iter().max().copied().unwrap_or(0) + 1).max(2);
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(name, inputs, labels, dim, num_classes, range)
}

fn csv_err(path: &Path, e: csv::Error) -> MisdError {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    MisdError::Format {
        offset,
        message: format!("{}: {e}", path.display()),
    }
}

/// Disjoint validation/test index sets over a test pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub val_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Random split of `0..n`: `round(val_fraction * n)` validation indices, the rest test.
/// Both lists are returned sorted.
pub fn split_val_test(n: usize, val_fraction: f64, seed: u64) -> Result<Split> {
    if n == 0 {
        return Err(MisdError::Parameter("cannot split an empty dataset".into()));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(MisdError::Parameter(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let n_val = (val_fraction * n as f64).round() as usize;
    let perm = rng::permutation(n, &mut stream_rng(seed, stream::SPLIT));
    let mut val_indices = perm[..n_val].to_vec();
    let mut test_indices = perm[n_val..].to_vec();
    val_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(Split {
        val_indices,
        test_indices,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    GaussianNoise,
    UniformNoise,
    Blur1d,
}

impl FromStr for CorruptionKind {
    type Err = MisdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_noise" => Ok(Self::GaussianNoise),
            "uniform_noise" => Ok(Self::UniformNoise),
            "blur_1d" => Ok(Self::Blur1d),
            other => Err(MisdError::Parameter(format!("unknown corruption kind `{other}`"))),
        }
    }
}

/// Corrupted copy of `dataset`, clipped to its input range. Severity 0 is the identity.
///
/// Noise scales are fractions of the range width: Gaussian `sigma = 0.04 * s`,
/// uniform half-width `0.06 * s`; `blur_1d` averages a window of radius `s`
/// along the feature axis.
pub fn corrupt(dataset: &Dataset, kind: CorruptionKind, severity: u32, seed: u64) -> Result<Dataset> {
    if severity > 5 {
        return Err(MisdError::Parameter(format!("severity must be in 0..=5, got {severity}")));
    }
    let mut out = dataset.clone();
    out.name = format!("{}+{kind:?}@{severity}", dataset.name);
    if severity == 0 {
        return Ok(out);
    }
    let s = severity as f64;
    let width = dataset.range_width();
    let mut rng = stream_rng(seed, stream::CORRUPT);
    match kind {
        CorruptionKind::GaussianNoise => {
            let noise = Normal::new(0.0, 0.04 * s * width).expect("positive std");
            add_noise(&mut out, &mut rng, |r| noise.sample(r));
        }
        CorruptionKind::UniformNoise => {
            let a = 0.06 * s * width;
            let noise = Uniform::new_inclusive(-a, a).expect("valid bounds");
            add_noise(&mut out, &mut rng, |r| noise.sample(r));
        }
        CorruptionKind::Blur1d => {
            let radius = severity as usize;
            let d = dataset.dim;
            for i in 0..dataset.len() {
                let row = dataset.input(i);
                for j in 0..d {
                    let lo = j.saturating_sub(radius);
                    let hi = (j + radius).min(d - 1);
                    let mean = row[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
                    out.inputs[i * d + j] = dataset.clip(mean);
                }
            }
        }
    }
    Ok(out)
}

fn add_noise<R: RngCore>(ds: &mut Dataset, rng: &mut R, mut draw: impl FnMut(&mut R) -> f64) {
    let (lo, hi) = ds.input_range;
    for v in &mut ds.inputs {
        *v = (*v + draw(rng)).clamp(lo, hi);
    }
}
